use std::sync::Arc;

use super::{Element, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// What a [`Function`] sees during the backward sweep.
pub struct Adjoint<'a, T: Element> {
    inputs: Vec<&'a Tensor<T>>,
    output: &'a Tensor<T>,
    needs_grad: Vec<bool>,
}

impl<'a, T: Element> Adjoint<'a, T> {
    pub fn input(&self, i: usize) -> &'a Tensor<T> {
        self.inputs[i]
    }

    pub fn output(&self) -> &'a Tensor<T> {
        self.output
    }

    pub fn needs_grad(&self, i: usize) -> bool {
        self.needs_grad[i]
    }
}

/// Adjoint rule of a recorded operation.
pub trait Function<T: Element> {
    fn name(&self) -> &'static str;

    /// Vector-Jacobian products for each input, in input order. Slots whose
    /// input does not need a gradient may be `None`.
    fn backward(&self, ctx: &Adjoint<'_, T>, grad_output: &[T]) -> Vec<Option<Vec<T>>>;
}

struct Node<T: Element> {
    value: Arc<Tensor<T>>,
    requires_grad: bool,
    inputs: Vec<Var>,
    function: Option<Box<dyn Function<T>>>,
    grad: Option<Vec<T>>,
}

/// Tape of operations in recording order. Inputs always precede the node
/// that consumes them, so a reverse sweep is a valid topological order.
pub struct Graph<T: Element = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: impl Into<Arc<Tensor<T>>>, requires_grad: bool) -> Var {
        self.push(Node {
            value: value.into(),
            requires_grad,
            inputs: Vec::new(),
            function: None,
            grad: None,
        })
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: impl Into<Arc<Tensor<T>>>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: impl Into<Arc<Tensor<T>>>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Gradient accumulated by the last [`Graph::backward`], if any reached `var`.
    pub fn grad(&self, var: Var) -> Option<&[T]> {
        self.nodes[var.0].grad.as_deref()
    }

    pub fn grad_tensor(&self, var: Var) -> Option<Tensor<T>> {
        let node = &self.nodes[var.0];
        node.grad
            .as_ref()
            .map(|g| Tensor::new(node.value.shape().to_vec(), g.clone()).expect("grad shape"))
    }

    /// Records `value` as the result of `function` applied to `inputs`. The
    /// adjoint is kept only when some input requires a gradient.
    pub fn record(
        &mut self,
        value: Tensor<T>,
        inputs: &[Var],
        function: impl Function<T> + 'static,
    ) -> Var {
        debug_assert!(
            value.all_finite(),
            "{} produced non-finite values",
            function.name()
        );
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(Node {
            value: Arc::new(value),
            requires_grad,
            inputs: inputs.to_vec(),
            function: requires_grad.then(|| Box::new(function) as Box<dyn Function<T>>),
            grad: None,
        })
    }

    fn push(&mut self, node: Node<T>) -> Var {
        self.nodes.push(node);
        Var(self.nodes.len() - 1)
    }

    /// Reverse sweep from a scalar `loss`. Gradients from multiple consumers
    /// of a node are summed.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let loss_node = &self.nodes[loss.0];
        if loss_node.value.numel() != 1 {
            return Err(Error::NonScalarLoss(loss_node.value.shape().to_vec()));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(grad_out) = self.nodes[i].grad.take() else {
                continue;
            };
            let contributions = match &self.nodes[i].function {
                Some(function) => {
                    let node = &self.nodes[i];
                    let ctx = Adjoint {
                        inputs: node.inputs.iter().map(|v| &*self.nodes[v.0].value).collect(),
                        output: &node.value,
                        needs_grad: node
                            .inputs
                            .iter()
                            .map(|v| self.nodes[v.0].requires_grad)
                            .collect(),
                    };
                    let grads = function.backward(&ctx, &grad_out);
                    debug_assert_eq!(grads.len(), node.inputs.len(), "{}", function.name());
                    node.inputs.iter().copied().zip(grads).collect::<Vec<_>>()
                }
                None => Vec::new(),
            };
            self.nodes[i].grad = Some(grad_out);

            for (input, grad) in contributions {
                let Some(grad) = grad else { continue };
                let target = &mut self.nodes[input.0];
                if !target.requires_grad {
                    continue;
                }
                debug_assert_eq!(grad.len(), target.value.numel());
                match &mut target.grad {
                    Some(acc) => acc.iter_mut().zip(&grad).for_each(|(a, g)| *a = *a + *g),
                    None => target.grad = Some(grad),
                }
            }
        }
        Ok(())
    }
}
