//! Regression losses returning the value and its gradient with respect to the prediction.

use super::Real;
use crate::error::{Error, Result};

fn check(pred_len: usize, target_len: usize, dim: usize) -> Result<usize> {
    if dim == 0 || pred_len != target_len || pred_len % dim != 0 || pred_len == 0 {
        return Err(Error::ShapeMismatch(format!(
            "prediction {pred_len}, target {target_len}, dimension {dim}"
        )));
    }
    Ok(pred_len / dim)
}

/// `(1/N) sum_i |pred_i - target_i|^2` over `N` rows of width `dim`.
pub fn loss_mse<T: Real>(pred: &[T], target: &[T], dim: usize) -> Result<(f64, Vec<T>)> {
    let n = check(pred.len(), target.len(), dim)?;
    let inv_n = 1.0 / n as f64;
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let e = (p - t).to_f64().unwrap();
            loss += e * e;
            T::of(2.0 * e * inv_n)
        })
        .collect();
    Ok((loss * inv_n, grad))
}

/// Elementwise Huber penalty with threshold `delta`, averaged over all `N * dim` entries.
pub fn loss_huber<T: Real>(pred: &[T], target: &[T], dim: usize, delta: f64) -> Result<(f64, Vec<T>)> {
    check(pred.len(), target.len(), dim)?;
    if !(delta > 0.0) {
        return Err(Error::Config(format!("Huber threshold {delta} must be positive")));
    }
    let inv = 1.0 / pred.len() as f64;
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let e = (p - t).to_f64().unwrap();
            if e.abs() <= delta {
                loss += 0.5 * e * e;
                T::of(e * inv)
            } else {
                loss += delta * (e.abs() - 0.5 * delta);
                T::of(delta * e.signum() * inv)
            }
        })
        .collect();
    Ok((loss * inv, grad))
}
