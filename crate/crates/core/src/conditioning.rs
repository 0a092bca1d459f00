//! Conditioning on `(t, y(t))`.
//!
//! `t` goes through fixed sin/cos features, then each of `y(t)` and the
//! features passes through its own two-layer Mish MLP. The concatenated
//! outputs form the embedding. Every normalization layer of a conditioned
//! model projects that embedding to a per-example, per-channel scale and shift.

use crate::autodiff::{Parameter, Tensor};
use crate::error::{check_unit_interval, Error, Result};
use crate::nn::{Linear, Module, Norm, NormKind};
use crate::scalar::Scalar;
use rand::Rng;
use std::f64::consts::TAU;

pub const DEFAULT_EMBED_WIDTH: usize = 128;
pub const DEFAULT_NUM_FREQUENCIES: usize = 6;

/// Fixed features `[sin(2π f_i t)…, cos(2π f_i t)…]` with `f_i = 2^i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FourierTimeEmbedding {
    num_frequencies: usize,
}

impl FourierTimeEmbedding {
    pub fn new(num_frequencies: usize) -> Self {
        Self { num_frequencies }
    }

    pub fn width(&self) -> usize {
        2 * self.num_frequencies
    }

    pub fn frequencies(&self) -> impl Iterator<Item = f64> {
        (0..self.num_frequencies).map(|i| (1u64 << i) as f64)
    }

    pub fn features(&self, t: f64) -> Result<Vec<f64>> {
        check_unit_interval("t", t)?;
        let sin = self.frequencies().map(|f| (TAU * f * t).sin());
        let cos = self.frequencies().map(|f| (TAU * f * t).cos());
        Ok(sin.chain(cos).collect())
    }

    /// Stacked features for a batch of levels, `[N × 2F]`.
    pub fn batch<T: Scalar>(&self, ts: &[T]) -> Result<Tensor<T>> {
        let mut data = Vec::with_capacity(ts.len() * self.width());
        for &t in ts {
            data.extend(self.features(t.as_f64())?.into_iter().map(T::of));
        }
        Tensor::new(&[ts.len(), self.width()], data)
    }
}

impl Default for FourierTimeEmbedding {
    fn default() -> Self {
        Self::new(DEFAULT_NUM_FREQUENCIES)
    }
}

/// Per-example embedding of `(t, y(t))`, `[N × E]`.
#[derive(Debug, Clone)]
pub struct ConditioningEmbedding<T: Scalar>(Tensor<T>);

impl<T: Scalar> ConditioningEmbedding<T> {
    pub fn tensor(&self) -> &Tensor<T> {
        &self.0
    }

    pub fn width(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn batch_size(&self) -> usize {
        self.0.shape()[0]
    }
}

#[derive(Debug)]
struct Mlp<T: Scalar> {
    hidden: Linear<T>,
    out: Linear<T>,
}

impl<T: Scalar> Mlp<T> {
    fn new<R: Rng + ?Sized>(name: &str, inputs: usize, width: usize, rng: &mut R) -> Self {
        Self {
            hidden: Linear::new(&format!("{name}.0"), inputs, width, rng),
            out: Linear::new(&format!("{name}.1"), width, width, rng),
        }
    }

    fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.out.forward(&self.hidden.forward(x)?.mish())
    }
}

/// Builds [`ConditioningEmbedding`]s from noisy targets and noise levels.
#[derive(Debug)]
pub struct Embedder<T: Scalar> {
    fourier: FourierTimeEmbedding,
    target_width: usize,
    target_mlp: Mlp<T>,
    time_mlp: Mlp<T>,
}

impl<T: Scalar> Embedder<T> {
    pub fn new<R: Rng + ?Sized>(
        target_width: usize,
        embed_width: usize,
        fourier: FourierTimeEmbedding,
        rng: &mut R,
    ) -> Result<Self> {
        if embed_width < 2 || embed_width % 2 != 0 {
            return Err(Error::Config(format!("cond.embed_width must be even and >= 2, got {embed_width}")));
        }
        if fourier.num_frequencies == 0 || fourier.num_frequencies > 52 {
            return Err(Error::Config(format!(
                "cond.num_frequencies must be in 1..=52, got {}",
                fourier.num_frequencies
            )));
        }
        let half = embed_width / 2;
        Ok(Self {
            fourier,
            target_width,
            target_mlp: Mlp::new("embed.target", target_width, half, rng),
            time_mlp: Mlp::new("embed.time", fourier.width(), half, rng),
        })
    }

    pub fn width(&self) -> usize {
        self.target_mlp.out.outputs() * 2
    }

    pub fn target_width(&self) -> usize {
        self.target_width
    }

    /// `y_noisy: [N × target_width]`, one level per row.
    pub fn embed(&self, y_noisy: &Tensor<T>, t: &[T]) -> Result<ConditioningEmbedding<T>> {
        match y_noisy.shape() {
            [n, w] if *w == self.target_width && *n == t.len() => {}
            other => {
                return Err(Error::Config(format!(
                    "embedding expects [{} x {}] noisy targets, got {other:?}",
                    t.len(),
                    self.target_width
                )))
            }
        }
        let target = self.target_mlp.forward(y_noisy)?;
        let time = self.time_mlp.forward(&self.fourier.batch(t)?)?;
        Ok(ConditioningEmbedding(target.concat_cols(&time)?))
    }
}

impl<T: Scalar> Module<T> for Embedder<T> {
    fn parameters(&self) -> Vec<&Parameter<T>> {
        let mut p = self.target_mlp.hidden.parameters();
        p.extend(self.target_mlp.out.parameters());
        p.extend(self.time_mlp.hidden.parameters());
        p.extend(self.time_mlp.out.parameters());
        p
    }
}

/// Normalization followed by either a learned per-channel affine map
/// (`γ`, `β`) or, when a projection is present, its conditional version
///
/// `normalize(x) · (γ + W_γ·mish(e)) + (β + W_β·mish(e))`.
///
/// `γ` starts at one and `β` and both projections at zero, so a fresh
/// conditional layer equals its unconditional counterpart exactly.
#[derive(Debug)]
pub struct ConditionalNorm<T: Scalar> {
    norm: Norm<T>,
    gamma: Parameter<T>,
    beta: Parameter<T>,
    projection: Option<(Parameter<T>, Parameter<T>)>,
}

impl<T: Scalar> ConditionalNorm<T> {
    /// `embed_width = None` builds the unconditional layer.
    pub fn new(name: &str, kind: NormKind, channels: usize, embed_width: Option<usize>) -> Self {
        let projection = embed_width.map(|e| {
            (
                Parameter::zeros(format!("{name}.proj_scale"), &[e, channels]),
                Parameter::zeros(format!("{name}.proj_shift"), &[e, channels]),
            )
        });
        Self {
            norm: Norm::new(kind, channels),
            gamma: Parameter::filled(format!("{name}.gamma"), &[channels], T::one()),
            beta: Parameter::zeros(format!("{name}.beta"), &[channels]),
            projection,
        }
    }

    pub fn norm(&self) -> &Norm<T> {
        &self.norm
    }

    pub fn is_conditional(&self) -> bool {
        self.projection.is_some()
    }

    pub fn projections(&self) -> Option<(&Parameter<T>, &Parameter<T>)> {
        self.projection.as_ref().map(|(a, b)| (a, b))
    }

    pub fn forward(&self, x: &Tensor<T>, emb: Option<&ConditioningEmbedding<T>>, train: bool) -> Result<Tensor<T>> {
        let channels = x.shape().get(1).copied().unwrap_or(0);
        if x.shape().len() < 2 || channels != self.norm.channels() {
            return Err(Error::Config(format!(
                "conditional norm has {} channels, input shape is {:?}",
                self.norm.channels(),
                x.shape()
            )));
        }
        let normed = self.norm.normalize(x, train)?;
        match (&self.projection, emb) {
            (None, _) => normed.channel_affine(self.gamma.tensor(), self.beta.tensor()),
            (Some(_), None) => Err(Error::Usage("conditional norm called without an embedding".into())),
            (Some((w_scale, w_shift)), Some(emb)) => {
                if emb.width() != w_scale.shape()[0] || emb.batch_size() != x.shape()[0] {
                    return Err(Error::Config(format!(
                        "embedding shape {:?} does not fit projection {:?} for batch {}",
                        emb.tensor().shape(),
                        w_scale.shape(),
                        x.shape()[0]
                    )));
                }
                let m = emb.tensor().mish();
                let scale = m.matmul(w_scale.tensor())?.add_channel_bias(self.gamma.tensor())?;
                let shift = m.matmul(w_shift.tensor())?.add_channel_bias(self.beta.tensor())?;
                normed.sample_affine(&scale, &shift)
            }
        }
    }
}

impl<T: Scalar> Module<T> for ConditionalNorm<T> {
    fn parameters(&self) -> Vec<&Parameter<T>> {
        let mut p = vec![&self.gamma, &self.beta];
        if let Some((a, b)) = &self.projection {
            p.push(a);
            p.push(b);
        }
        p
    }
}
