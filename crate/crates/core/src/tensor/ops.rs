//! Differentiable primitives: elementwise arithmetic, matmul, reductions and
//! shape plumbing. No broadcasting beyond tensor-by-scalar.

use super::{Adjoint, Element, Function, Graph, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ElementwiseKind {
    Add,
    Sub,
    Mul,
    /// Multiply by a scalar constant.
    Scale(f64),
    /// Add a scalar constant.
    Shift(f64),
    Relu,
    Square,
}

impl ElementwiseKind {
    fn is_binary(self) -> bool {
        matches!(self, Self::Add | Self::Sub | Self::Mul)
    }
}

struct Elementwise {
    kind: ElementwiseKind,
}

impl<T: Element> Function<T> for Elementwise {
    fn name(&self) -> &'static str {
        "elementwise"
    }

    fn backward(&self, ctx: &Adjoint<'_, T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let a = ctx.input(0).data();
        match self.kind {
            ElementwiseKind::Add => vec![Some(g.to_vec()), Some(g.to_vec())],
            ElementwiseKind::Sub => vec![Some(g.to_vec()), Some(g.iter().map(|&v| -v).collect())],
            ElementwiseKind::Mul => {
                let b = ctx.input(1).data();
                vec![
                    ctx.needs_grad(0)
                        .then(|| g.iter().zip(b).map(|(&g, &b)| g * b).collect()),
                    ctx.needs_grad(1)
                        .then(|| g.iter().zip(a).map(|(&g, &a)| g * a).collect()),
                ]
            }
            ElementwiseKind::Scale(c) => {
                let c = T::from_f64(c).unwrap();
                vec![Some(g.iter().map(|&v| v * c).collect())]
            }
            ElementwiseKind::Shift(_) => vec![Some(g.to_vec())],
            ElementwiseKind::Relu => vec![Some(
                g.iter()
                    .zip(a)
                    .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
                    .collect(),
            )],
            ElementwiseKind::Square => {
                let two = T::from_f64(2.0).unwrap();
                vec![Some(g.iter().zip(a).map(|(&g, &x)| two * x * g).collect())]
            }
        }
    }
}

pub fn elementwise<T: Element>(
    graph: &mut Graph<T>,
    kind: ElementwiseKind,
    a: Var,
    b: Option<Var>,
) -> Result<Var> {
    let av = graph.value(a);
    let data: Vec<T> = if kind.is_binary() {
        let b = b.ok_or_else(|| Error::invalid(format!("{kind:?} needs two operands")))?;
        let bv = graph.value(b);
        if av.shape() != bv.shape() {
            return Err(Error::ShapeMismatch {
                op: "elementwise",
                left: av.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        let f: fn(T, T) -> T = match kind {
            ElementwiseKind::Add => |x, y| x + y,
            ElementwiseKind::Sub => |x, y| x - y,
            _ => |x, y| x * y,
        };
        av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect()
    } else {
        if b.is_some() {
            return Err(Error::invalid(format!("{kind:?} takes one operand")));
        }
        match kind {
            ElementwiseKind::Scale(c) => {
                let c = T::from_f64(c).unwrap();
                av.data().iter().map(|&x| x * c).collect()
            }
            ElementwiseKind::Shift(c) => {
                let c = T::from_f64(c).unwrap();
                av.data().iter().map(|&x| x + c).collect()
            }
            ElementwiseKind::Relu => av.data().iter().map(|&x| x.max(T::zero())).collect(),
            _ => av.data().iter().map(|&x| x * x).collect(),
        }
    };
    let value = Tensor::new(av.shape().to_vec(), data)?;
    let inputs: Vec<Var> = std::iter::once(a).chain(b).collect();
    Ok(graph.record(value, &inputs, Elementwise { kind }))
}

pub fn add<T: Element>(g: &mut Graph<T>, a: Var, b: Var) -> Result<Var> {
    elementwise(g, ElementwiseKind::Add, a, Some(b))
}

pub fn sub<T: Element>(g: &mut Graph<T>, a: Var, b: Var) -> Result<Var> {
    elementwise(g, ElementwiseKind::Sub, a, Some(b))
}

pub fn mul<T: Element>(g: &mut Graph<T>, a: Var, b: Var) -> Result<Var> {
    elementwise(g, ElementwiseKind::Mul, a, Some(b))
}

pub fn scale<T: Element>(g: &mut Graph<T>, a: Var, c: f64) -> Result<Var> {
    elementwise(g, ElementwiseKind::Scale(c), a, None)
}

pub fn shift<T: Element>(g: &mut Graph<T>, a: Var, c: f64) -> Result<Var> {
    elementwise(g, ElementwiseKind::Shift(c), a, None)
}

pub fn relu<T: Element>(g: &mut Graph<T>, a: Var) -> Result<Var> {
    elementwise(g, ElementwiseKind::Relu, a, None)
}

pub fn square<T: Element>(g: &mut Graph<T>, a: Var) -> Result<Var> {
    elementwise(g, ElementwiseKind::Square, a, None)
}

struct MatMul {
    m: usize,
    k: usize,
    n: usize,
}

impl<T: Element> Function<T> for MatMul {
    fn name(&self) -> &'static str {
        "matmul"
    }

    fn backward(&self, ctx: &Adjoint<'_, T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let (m, k, n) = (self.m, self.k, self.n);
        let a = ctx.input(0).data();
        let b = ctx.input(1).data();
        let da = ctx.needs_grad(0).then(|| {
            let mut da = vec![T::zero(); m * k];
            T::gemm(m, n, k, g, (n, 1), b, (1, n), &mut da, false);
            da
        });
        let db = ctx.needs_grad(1).then(|| {
            let mut db = vec![T::zero(); k * n];
            T::gemm(k, m, n, a, (1, k), g, (n, 1), &mut db, false);
            db
        });
        vec![da, db]
    }
}

/// `[m,k]·[k,n] → [m,n]`.
pub fn matmul<T: Element>(graph: &mut Graph<T>, a: Var, b: Var) -> Result<Var> {
    let (av, bv) = (graph.value(a), graph.value(b));
    if av.rank() != 2 || bv.rank() != 2 || av.shape()[1] != bv.shape()[0] {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            left: av.shape().to_vec(),
            right: bv.shape().to_vec(),
        });
    }
    let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
    let mut out = vec![T::zero(); m * n];
    T::gemm(m, k, n, av.data(), (k, 1), bv.data(), (n, 1), &mut out, false);
    let value = Tensor::new(vec![m, n], out)?;
    Ok(graph.record(value, &[a, b], MatMul { m, k, n }))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
    Max,
}

/// Splits a shape around `axis` into (outer, len, inner) extents.
fn axis_extents(shape: &[usize], axis: Option<usize>) -> (usize, usize, usize) {
    match axis {
        None => (1, shape.iter().product(), 1),
        Some(ax) => (
            shape[..ax].iter().product(),
            shape[ax],
            shape[ax + 1..].iter().product(),
        ),
    }
}

struct Reduce {
    kind: ReduceKind,
    outer: usize,
    len: usize,
    inner: usize,
    /// Flat input index of each output's maximum (max only).
    argmax: Vec<usize>,
}

impl<T: Element> Function<T> for Reduce {
    fn name(&self) -> &'static str {
        "reduce"
    }

    fn backward(&self, ctx: &Adjoint<'_, T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let mut da = vec![T::zero(); ctx.input(0).numel()];
        match self.kind {
            ReduceKind::Max => {
                for (&src, &gv) in self.argmax.iter().zip(g) {
                    da[src] = da[src] + gv;
                }
            }
            ReduceKind::Sum | ReduceKind::Mean => {
                let factor = if self.kind == ReduceKind::Mean {
                    T::one() / T::from_usize(self.len).unwrap()
                } else {
                    T::one()
                };
                for o in 0..self.outer {
                    for l in 0..self.len {
                        for i in 0..self.inner {
                            da[(o * self.len + l) * self.inner + i] = g[o * self.inner + i] * factor;
                        }
                    }
                }
            }
        }
        vec![Some(da)]
    }
}

/// Sum, mean or max over one axis (removed from the shape) or over all
/// elements (scalar result). Max ties go to the lowest index.
pub fn reduce<T: Element>(
    graph: &mut Graph<T>,
    kind: ReduceKind,
    a: Var,
    axis: Option<usize>,
) -> Result<Var> {
    let av = graph.value(a);
    if let Some(ax) = axis {
        if ax >= av.rank() {
            return Err(Error::InvalidAxis {
                op: "reduce",
                axis: ax,
                rank: av.rank(),
            });
        }
    }
    let (outer, len, inner) = axis_extents(av.shape(), axis);
    let out_shape: Vec<usize> = match axis {
        None => Vec::new(),
        Some(ax) => av
            .shape()
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != ax)
            .map(|(_, &d)| d)
            .collect(),
    };
    let x = av.data();
    let mut out = Vec::with_capacity(outer * inner);
    let mut argmax = Vec::new();
    for o in 0..outer {
        for i in 0..inner {
            let at = |l: usize| (o * len + l) * inner + i;
            match kind {
                ReduceKind::Sum | ReduceKind::Mean => {
                    let s: T = (0..len).map(|l| x[at(l)]).sum();
                    out.push(if kind == ReduceKind::Mean {
                        s / T::from_usize(len).unwrap()
                    } else {
                        s
                    });
                }
                ReduceKind::Max => {
                    let mut best = at(0);
                    for l in 1..len {
                        if x[at(l)] > x[best] {
                            best = at(l);
                        }
                    }
                    out.push(x[best]);
                    argmax.push(best);
                }
            }
        }
    }
    let value = Tensor::new(out_shape, out)?;
    Ok(graph.record(
        value,
        &[a],
        Reduce {
            kind,
            outer,
            len,
            inner,
            argmax,
        },
    ))
}

pub fn sum<T: Element>(g: &mut Graph<T>, a: Var, axis: Option<usize>) -> Result<Var> {
    reduce(g, ReduceKind::Sum, a, axis)
}

pub fn mean<T: Element>(g: &mut Graph<T>, a: Var, axis: Option<usize>) -> Result<Var> {
    reduce(g, ReduceKind::Mean, a, axis)
}

pub fn max<T: Element>(g: &mut Graph<T>, a: Var, axis: Option<usize>) -> Result<Var> {
    reduce(g, ReduceKind::Max, a, axis)
}

struct PassThrough;

impl<T: Element> Function<T> for PassThrough {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn backward(&self, _ctx: &Adjoint<'_, T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        vec![Some(g.to_vec())]
    }
}

pub fn reshape<T: Element>(graph: &mut Graph<T>, a: Var, shape: &[usize]) -> Result<Var> {
    let value = graph.value(a).reshape(shape.to_vec())?;
    Ok(graph.record(value, &[a], PassThrough))
}

struct SliceRows {
    offset: usize,
}

impl<T: Element> Function<T> for SliceRows {
    fn name(&self) -> &'static str {
        "slice_rows"
    }

    fn backward(&self, ctx: &Adjoint<'_, T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let mut da = vec![T::zero(); ctx.input(0).numel()];
        da[self.offset..self.offset + g.len()].copy_from_slice(g);
        vec![Some(da)]
    }
}

/// Rows `start..start+len` of the leading axis.
pub fn slice_rows<T: Element>(graph: &mut Graph<T>, a: Var, start: usize, len: usize) -> Result<Var> {
    let av = graph.value(a);
    let value = av.slice_rows(start, len)?;
    let offset = start * (av.numel() / av.shape()[0]);
    Ok(graph.record(value, &[a], SliceRows { offset }))
}
