//! Affine-free normalization ops. The learned or conditional affine
//! transform is applied separately by the caller.

use super::ops::channel_layout;
use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use std::ops::Range;

/// A normalization set: contiguous runs of the flat buffer.
type Set = Vec<Range<usize>>;

fn set_iter(set: &Set) -> impl Iterator<Item = usize> + '_ {
    set.iter().flat_map(|r| r.clone())
}

fn set_len(set: &Set) -> usize {
    set.iter().map(|r| r.len()).sum()
}

/// Standardizes each set; returns `(x̂, means, vars, inv_stds)`.
fn standardize<T: Scalar>(x: &[T], sets: &[Set], eps: T) -> (Vec<T>, Vec<T>, Vec<T>, Vec<T>) {
    let mut out = vec![T::zero(); x.len()];
    let mut means = Vec::with_capacity(sets.len());
    let mut vars = Vec::with_capacity(sets.len());
    let mut inv_stds = Vec::with_capacity(sets.len());
    for set in sets {
        let m = T::of(set_len(set) as f64);
        let mean = set_iter(set).map(|i| x[i]).sum::<T>() / m;
        let var = set_iter(set).map(|i| (x[i] - mean) * (x[i] - mean)).sum::<T>() / m;
        let inv = T::one() / (var + eps).sqrt();
        for r in set {
            for (o, &v) in out[r.clone()].iter_mut().zip(&x[r.clone()]) {
                *o = (v - mean) * inv;
            }
        }
        means.push(mean);
        vars.push(var);
        inv_stds.push(inv);
    }
    (out, means, vars, inv_stds)
}

/// dx = inv_std · (g − mean(g) − x̂ · mean(g · x̂)) within each set.
fn standardize_backward<T: Scalar>(g: &[T], xhat: &[T], sets: &[Set], inv_stds: &[T]) -> Vec<T> {
    let mut dx = vec![T::zero(); g.len()];
    for (set, &inv) in sets.iter().zip(inv_stds) {
        let m = T::of(set_len(set) as f64);
        let mean_g = set_iter(set).map(|i| g[i]).sum::<T>() / m;
        let mean_gx = set_iter(set).map(|i| g[i] * xhat[i]).sum::<T>() / m;
        for r in set {
            for i in r.clone() {
                dx[i] = inv * (g[i] - mean_g - xhat[i] * mean_gx);
            }
        }
    }
    dx
}

fn layout<T: Scalar>(op: &'static str, x: &Tensor<T>) -> Result<(usize, usize, usize)> {
    channel_layout(x.shape()).ok_or_else(|| Error::Dimension {
        op,
        lhs: x.shape().to_vec(),
        rhs: Vec::new(),
    })
}

/// Per-channel batch statistics returned alongside a batch-norm output.
#[derive(Debug, Clone)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    /// Standardizes each of `groups` channel groups of every example over
    /// `(C / groups) × spatial` elements. `groups == 1` is layer norm.
    pub fn group_norm(&self, groups: usize, eps: T) -> Result<Tensor<T>> {
        let (n, c, s) = layout("group_norm", self)?;
        if groups == 0 || c % groups != 0 {
            return Err(Error::Config(format!("group_norm: {c} channels cannot form {groups} groups")));
        }
        let per = (c / groups) * s;
        let sets: Vec<Set> = (0..n * groups).map(|k| vec![k * per..(k + 1) * per]).collect();
        Ok(self.standardize_sets(sets, eps).0)
    }

    /// Standardizes each channel over `N × spatial` (train-mode batch norm).
    pub fn batch_norm(&self, eps: T) -> Result<(Tensor<T>, BatchStats<T>)> {
        let (n, c, s) = layout("batch_norm", self)?;
        let sets: Vec<Set> = (0..c)
            .map(|ch| (0..n).map(|b| (b * c + ch) * s..(b * c + ch + 1) * s).collect())
            .collect();
        let (out, mean, var) = self.standardize_sets(sets, eps);
        Ok((out, BatchStats { mean, var }))
    }

    /// `(x − mean[c]) / sqrt(var[c] + eps)` with fixed statistics (eval-mode batch norm).
    pub fn normalize_with(&self, mean: &[T], var: &[T], eps: T) -> Result<Tensor<T>> {
        let (_, c, s) = layout("normalize_with", self)?;
        if mean.len() != c || var.len() != c {
            return Err(Error::Dimension {
                op: "normalize_with",
                lhs: self.shape().to_vec(),
                rhs: vec![mean.len()],
            });
        }
        let inv: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mean = mean.to_vec();
        let data = self
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| (v - mean[(i / s) % c]) * inv[(i / s) % c])
            .collect();
        Ok(Tensor::from_op(self.shape().to_vec(), data, &[self], move |g, _| {
            vec![Some(g.iter().enumerate().map(|(i, &gv)| gv * inv[(i / s) % c]).collect())]
        }))
    }

    fn standardize_sets(&self, sets: Vec<Set>, eps: T) -> (Tensor<T>, Vec<T>, Vec<T>) {
        let x = self.data();
        let (out, means, vars, inv_stds) = standardize(&x, &sets, eps);
        drop(x);
        let xhat = out.clone();
        let t = Tensor::from_op(self.shape().to_vec(), out, &[self], move |g, _| {
            vec![Some(standardize_backward(g, &xhat, &sets, &inv_stds))]
        });
        (t, means, vars)
    }
}
