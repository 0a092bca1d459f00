use super::Batch;
use crate::error::{Error, Result};
use rand::Rng;
use rand_distr::{Beta, Distribution};

/// `λ ~ Beta(alpha, alpha)`.
pub fn sample_lambda<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> Result<f64> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Validation(format!("mixup alpha must be > 0, got {alpha}")));
    }
    let beta = Beta::new(alpha, alpha).map_err(|e| Error::Validation(format!("mixup alpha {alpha}: {e}")))?;
    Ok(beta.sample(rng))
}

/// `λ·a + (1 − λ)·b` for inputs and targets alike.
pub fn mix(a: &Batch, b: &Batch, lambda: f64) -> Result<Batch> {
    if a.len != b.len || a.inputs.len() != b.inputs.len() || a.targets.len() != b.targets.len() {
        return Err(Error::Validation(format!(
            "mixup needs batches of equal shape ({} vs {} examples)",
            a.len, b.len
        )));
    }
    let lerp = |x: &[f64], y: &[f64]| -> Vec<f64> {
        if lambda == 1.0 {
            return x.to_vec();
        }
        x.iter().zip(y).map(|(&p, &q)| lambda * p + (1.0 - lambda) * q).collect()
    };
    Ok(Batch {
        len: a.len,
        inputs: lerp(&a.inputs, &b.inputs),
        targets: lerp(&a.targets, &b.targets),
    })
}

/// One `λ` per call, shared by every example of the batch.
pub fn mixup<R: Rng + ?Sized>(a: &Batch, b: &Batch, alpha: f64, rng: &mut R) -> Result<(Batch, f64)> {
    let lambda = sample_lambda(alpha, rng)?;
    Ok((mix(a, b, lambda)?, lambda))
}
