use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment buffers mirroring the parameter list.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T: Element = f32> {
    pub step: u64,
    pub first_moment: Vec<Tensor<T>>,
    pub second_moment: Vec<Tensor<T>>,
}

impl<T: Element> AdamState<T> {
    pub fn new(shapes: &[Vec<usize>]) -> Self {
        Self {
            step: 0,
            first_moment: shapes.iter().map(|s| Tensor::zeros(s.clone())).collect(),
            second_moment: shapes.iter().map(|s| Tensor::zeros(s.clone())).collect(),
        }
    }
}

/// One bias-corrected ADAM update of every parameter; increments `state.step`.
pub fn adam_step<T: Element>(
    params: &mut [&mut Tensor<T>],
    grads: &[&[T]],
    state: &mut AdamState<T>,
    lr: f64,
    config: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return Err(Error::invalid(format!(
            "adam: {} params, {} grads, {} moment buffers",
            params.len(),
            grads.len(),
            state.first_moment.len()
        )));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.first_moment) {
        if p.numel() != g.len() || p.shape() != m.shape() {
            return Err(Error::ShapeMismatch {
                op: "adam",
                left: p.shape().to_vec(),
                right: m.shape().to_vec(),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (config.beta1, config.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        let m = state.first_moment[i].data_mut();
        let v = state.second_moment[i].data_mut();
        for (((w, &g), m), v) in p.data_mut().iter_mut().zip(grads[i]).zip(m.iter_mut()).zip(v.iter_mut()) {
            let g = g.to_f64().unwrap();
            let m_new = b1 * m.to_f64().unwrap() + (1.0 - b1) * g;
            let v_new = b2 * v.to_f64().unwrap() + (1.0 - b2) * g * g;
            *m = T::from_f64(m_new).unwrap();
            *v = T::from_f64(v_new).unwrap();
            let update = lr * (m_new / c1) / ((v_new / c2).sqrt() + config.epsilon);
            *w = T::from_f64(w.to_f64().unwrap() - update).unwrap();
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(g: f64, steps: usize) -> (f64, AdamState<f64>) {
        let mut p = Tensor::scalar(0.0f64);
        let mut state = AdamState::new(&[vec![]]);
        for _ in 0..steps {
            adam_step(&mut [&mut p], &[&[g]], &mut state, 1e-3, &AdamConfig::default()).unwrap();
        }
        (p.item().unwrap(), state)
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let (p, state) = run(0.0, 10);
        assert_eq!(p, 0.0);
        assert_eq!(state.step, 10);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let (p, _) = run(1.0, 1);
        assert!((p + 1e-3).abs() < 1e-10, "{p}");
    }

    #[test]
    fn constant_gradient_steps_approach_lr() {
        let (a, _) = run(0.37, 999);
        let (b, _) = run(0.37, 1000);
        assert!(((a - b) - 1e-3).abs() < 1e-8);
    }

    #[test]
    fn rejects_mismatched_lists() {
        let mut p = Tensor::scalar(0.0f64);
        let mut state = AdamState::<f64>::new(&[vec![], vec![]]);
        assert!(adam_step(&mut [&mut p], &[&[1.0]], &mut state, 1e-3, &AdamConfig::default()).is_err());
    }
}
