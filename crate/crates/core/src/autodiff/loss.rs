use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

fn matrix_dims<T: Scalar>(op: &'static str, logits: &Tensor<T>, target: &Tensor<T>) -> Result<(usize, usize)> {
    match (logits.shape(), target.shape()) {
        ([n, c], t) if t == [*n, *c] => Ok((*n, *c)),
        _ => Err(Error::Dimension {
            op,
            lhs: logits.shape().to_vec(),
            rhs: target.shape().to_vec(),
        }),
    }
}

/// Row-wise softmax of an `n × c` buffer, shifted by the row max.
pub fn softmax_rows<T: Scalar>(logits: &[T], c: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks(c) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = row.iter().map(|&z| (z - max).exp()).collect();
        let total: T = exps.iter().copied().sum();
        out.extend(exps.into_iter().map(|e| e / total));
    }
    out
}

impl<T: Scalar> Tensor<T> {
    /// Mean over the batch of `−Σ target · log softmax(logits)`.
    ///
    /// Target rows must be non-negative and sum to one, which admits mixed
    /// (soft) targets as well as one-hot rows.
    pub fn softmax_cross_entropy(&self, target: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, c) = matrix_dims("softmax_cross_entropy", self, target)?;
        let y = target.to_vec();
        let tol = T::of(1e-6);
        for (i, row) in y.chunks(c).enumerate() {
            let total: T = row.iter().copied().sum();
            if row.iter().any(|&v| v < T::zero()) || (total - T::one()).abs() > tol {
                return Err(Error::Validation(format!(
                    "target row {i} must be non-negative and sum to 1 (sum = {total})"
                )));
            }
        }
        let z = self.data();
        let mut loss = T::zero();
        for (zr, yr) in z.chunks(c).zip(y.chunks(c)) {
            let max = zr.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = zr.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
            loss += zr.iter().zip(yr).map(|(&zv, &yv)| yv * (lse - zv)).sum::<T>();
        }
        let inv_n = T::one() / T::of(n as f64);
        let probs = softmax_rows(&z, c);
        drop(z);
        Ok(Tensor::from_op(Vec::new(), vec![loss * inv_n], &[self, target], move |g, _| {
            let s = g[0] * inv_n;
            let dz = probs.iter().zip(&y).map(|(&p, &t)| (p - t) * s).collect();
            vec![Some(dz), None]
        }))
    }

    /// Mean over elements of the logistic loss, in the stable form
    /// `max(z, 0) − z·y + ln(1 + e^{−|z|})`.
    pub fn bce_with_logits(&self, target: &Tensor<T>) -> Result<Tensor<T>> {
        matrix_dims("bce_with_logits", self, target)?;
        let y = target.to_vec();
        if let Some(bad) = y.iter().find(|&&v| !(v >= T::zero() && v <= T::one())) {
            return Err(Error::Validation(format!("binary target {bad} outside [0, 1]")));
        }
        let z = self.to_vec();
        let m = T::of(z.len() as f64);
        let loss = z
            .iter()
            .zip(&y)
            .map(|(&zv, &yv)| zv.max(T::zero()) - zv * yv + (-zv.abs()).exp().ln_1p())
            .sum::<T>()
            / m;
        Ok(Tensor::from_op(Vec::new(), vec![loss], &[self, target], move |g, _| {
            let s = g[0] / m;
            let dz = z
                .iter()
                .zip(&y)
                .map(|(&zv, &yv)| {
                    let sig = if zv >= T::zero() {
                        T::one() / (T::one() + (-zv).exp())
                    } else {
                        let e = zv.exp();
                        e / (T::one() + e)
                    };
                    (sig - yv) * s
                })
                .collect();
            vec![Some(dz), None]
        }))
    }
}
