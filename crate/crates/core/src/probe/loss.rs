use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::trajectory::AffectTrajectory;
use crate::Scalar;

/// Hybrid regression objective: `(1/T) Σ_t ‖e_t − ê_t‖₂² + λ‖e_t − ê_t‖₁`.
pub fn emo_loss(pred: &AffectTrajectory, truth: &AffectTrajectory, lambda: f64) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!("trajectory lengths differ: {} vs {}", pred.len(), truth.len())));
    }
    if pred.is_empty() {
        return Err(Error::InvalidInput("emo_loss needs at least one point".into()));
    }
    let total: f64 = pred
        .points
        .iter()
        .zip(&truth.points)
        .map(|(p, t)| {
            let dv = p.valence - t.valence;
            let da = p.arousal - t.arousal;
            dv * dv + da * da + lambda * (dv.abs() + da.abs())
        })
        .sum();
    Ok(total / pred.len() as f64)
}

/// Matrix form over `T × 2` predictions; returns the loss and `∂L/∂pred`.
pub fn emo_loss_with_grad<T: Scalar>(pred: ArrayView2<T>, truth: ArrayView2<T>, lambda: T) -> Result<(T, Array2<T>)> {
    if pred.shape() != truth.shape() {
        return Err(Error::Shape(format!("{:?} vs {:?}", pred.shape(), truth.shape())));
    }
    if pred.nrows() == 0 {
        return Err(Error::InvalidInput("emo_loss needs at least one point".into()));
    }
    let n = T::of(pred.nrows() as f64);
    let resid = &pred - &truth;
    let loss = resid.iter().map(|&r| r * r + lambda * r.abs()).sum::<T>() / n;
    let two = T::of(2.0);
    let grad = resid.mapv(|r| {
        let sign = if r > T::zero() {
            T::one()
        } else if r < T::zero() {
            -T::one()
        } else {
            T::zero()
        };
        (two * r + lambda * sign) / n
    });
    Ok((loss, grad))
}
