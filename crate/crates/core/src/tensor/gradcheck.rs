use super::{Element, Tensor};
use crate::error::{Error, Result};

/// Central-difference estimate of `∂f/∂x`, one element at a time:
/// `(f(x + h·eᵢ) − f(x − h·eᵢ)) / 2h`.
pub fn finite_difference_grad<T, F>(mut f: F, x: &Tensor<T>, h: f64) -> Result<Tensor<T>>
where
    T: Element,
    F: FnMut(&Tensor<T>) -> Result<T>,
{
    if !(h > 0.0) {
        return Err(Error::invalid(format!("finite difference step must be > 0, got {h}")));
    }
    let step = T::from_f64(h).unwrap();
    let two_h = T::from_f64(2.0 * h).unwrap();
    let mut probe = x.clone();
    let mut grad = Vec::with_capacity(x.numel());
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let up = f(&probe)?;
        probe.data_mut()[i] = orig - step;
        let down = f(&probe)?;
        probe.data_mut()[i] = orig;
        grad.push((up - down) / two_h);
    }
    Tensor::new(x.shape().to_vec(), grad)
}

/// Largest elementwise `|a − b| / max(|a|, |b|, floor)`.
///
/// The floor keeps entries whose true gradient is ~0 from dominating through
/// round-off in the finite-difference estimate.
pub fn max_relative_error<T: Element>(a: &[T], b: &[T], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len(), "max_relative_error: length mismatch");
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let (x, y) = (x.to_f64().unwrap(), y.to_f64().unwrap());
            (x - y).abs() / x.abs().max(y.abs()).max(floor)
        })
        .fold(0.0, f64::max)
}
