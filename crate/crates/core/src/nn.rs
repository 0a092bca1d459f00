//! Layers shared by the backbones and the conditioning path.

use crate::autodiff::{Parameter, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::cell::RefCell;
use std::fmt;
use std::str::FromStr;

pub trait Module<T: Scalar> {
    fn parameters(&self) -> Vec<&Parameter<T>>;

    fn num_parameters(&self) -> usize {
        self.parameters().iter().map(|p| p.numel()).sum()
    }
}

/// `U(−1/√fan_in, 1/√fan_in)` values.
pub fn uniform_init<T: Scalar, R: Rng + ?Sized>(len: usize, fan_in: usize, rng: &mut R) -> Vec<T> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    (0..len).map(|_| T::of(rng.random_range(-bound..bound))).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Relu,
    Mish,
}

impl Activation {
    pub fn apply<T: Scalar>(self, x: &Tensor<T>) -> Tensor<T> {
        match self {
            Self::Relu => x.relu(),
            Self::Mish => x.mish(),
        }
    }
}

impl FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Self::Relu),
            "mish" => Ok(Self::Mish),
            other => Err(Error::Config(format!("unknown activation `{other}` (relu | mish)"))),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Relu => "relu",
            Self::Mish => "mish",
        })
    }
}

/// Inverted dropout: zeroes each entry with probability `p` and rescales the rest.
pub fn dropout<T: Scalar, R: Rng + ?Sized>(x: &Tensor<T>, p: f64, rng: &mut R) -> Result<Tensor<T>> {
    if p <= 0.0 {
        return Ok(x.clone());
    }
    let keep = T::of(1.0 / (1.0 - p));
    let mask: Vec<T> = (0..x.numel())
        .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
        .collect();
    x.mul_const(&mask)
}

/// `x · W + b` with `W: [in × out]`.
#[derive(Debug)]
pub struct Linear<T: Scalar> {
    weight: Parameter<T>,
    bias: Parameter<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn new<R: Rng + ?Sized>(name: &str, inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let weight = Parameter::new(format!("{name}.weight"), &[inputs, outputs], uniform_init(inputs * outputs, inputs, rng))
            .expect("shape matches");
        let bias = Parameter::new(format!("{name}.bias"), &[outputs], uniform_init(outputs, inputs, rng)).expect("shape matches");
        Self { weight, bias }
    }

    /// All-zero weights and bias.
    pub fn zeroed(name: &str, inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Parameter::zeros(format!("{name}.weight"), &[inputs, outputs]),
            bias: Parameter::zeros(format!("{name}.bias"), &[outputs]),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.matmul(self.weight.tensor())?.add_channel_bias(self.bias.tensor())
    }
}

impl<T: Scalar> Module<T> for Linear<T> {
    fn parameters(&self) -> Vec<&Parameter<T>> {
        vec![&self.weight, &self.bias]
    }
}

/// Bias-free square-kernel convolution; a normalization always follows it.
#[derive(Debug)]
pub struct Conv2d<T: Scalar> {
    weight: Parameter<T>,
    stride: usize,
    padding: usize,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let weight = Parameter::new(
            format!("{name}.weight"),
            &[out_channels, in_channels, kernel, kernel],
            uniform_init(out_channels * fan_in, fan_in, rng),
        )
        .expect("shape matches");
        Self { weight, stride, padding }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.conv2d(self.weight.tensor(), self.stride, self.padding)
    }
}

impl<T: Scalar> Module<T> for Conv2d<T> {
    fn parameters(&self) -> Vec<&Parameter<T>> {
        vec![&self.weight]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormKind {
    BatchNorm,
    GroupNorm,
    LayerNorm,
}

impl FromStr for NormKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "batch-norm" => Ok(Self::BatchNorm),
            "group-norm" => Ok(Self::GroupNorm),
            "layer-norm" => Ok(Self::LayerNorm),
            other => Err(Error::Config(format!(
                "unknown norm kind `{other}` (batch-norm | group-norm | layer-norm)"
            ))),
        }
    }
}

impl fmt::Display for NormKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::BatchNorm => "batch-norm",
            Self::GroupNorm => "group-norm",
            Self::LayerNorm => "layer-norm",
        })
    }
}

pub const NORM_EPS: f64 = 1e-5;
const RUNNING_MOMENTUM: f64 = 0.1;

/// Affine-free normalization over `[N, C, ...]` inputs.
///
/// Group norm uses two groups when the channel count is even, otherwise one.
#[derive(Debug)]
pub struct Norm<T: Scalar> {
    kind: NormKind,
    channels: usize,
    running_mean: RefCell<Vec<T>>,
    running_var: RefCell<Vec<T>>,
}

impl<T: Scalar> Norm<T> {
    pub fn new(kind: NormKind, channels: usize) -> Self {
        Self {
            kind,
            channels,
            running_mean: RefCell::new(vec![T::zero(); channels]),
            running_var: RefCell::new(vec![T::one(); channels]),
        }
    }

    pub fn kind(&self) -> NormKind {
        self.kind
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn groups(&self) -> usize {
        match self.kind {
            NormKind::GroupNorm if self.channels % 2 == 0 => 2,
            _ => 1,
        }
    }

    /// In train mode batch norm uses batch statistics and updates its running
    /// averages; in eval mode it uses the running averages.
    pub fn normalize(&self, x: &Tensor<T>, train: bool) -> Result<Tensor<T>> {
        let eps = T::of(NORM_EPS);
        match self.kind {
            NormKind::GroupNorm | NormKind::LayerNorm => x.group_norm(self.groups(), eps),
            NormKind::BatchNorm if train => {
                let (out, stats) = x.batch_norm(eps)?;
                let m = T::of(RUNNING_MOMENTUM);
                let count = T::of((x.numel() / self.channels) as f64);
                let unbias = if count > T::one() { count / (count - T::one()) } else { T::one() };
                let mut rm = self.running_mean.borrow_mut();
                let mut rv = self.running_var.borrow_mut();
                for c in 0..self.channels {
                    rm[c] = (T::one() - m) * rm[c] + m * stats.mean[c];
                    rv[c] = (T::one() - m) * rv[c] + m * stats.var[c] * unbias;
                }
                Ok(out)
            }
            NormKind::BatchNorm => x.normalize_with(&self.running_mean.borrow(), &self.running_var.borrow(), eps),
        }
    }

    /// Running statistics (batch norm only), for checkpoints.
    pub fn buffers(&self) -> Vec<(&'static str, Vec<T>)> {
        match self.kind {
            NormKind::BatchNorm => vec![
                ("running_mean", self.running_mean.borrow().clone()),
                ("running_var", self.running_var.borrow().clone()),
            ],
            _ => Vec::new(),
        }
    }

    pub fn load_buffer(&self, which: &str, values: &[T]) -> Result<()> {
        let slot = match which {
            "running_mean" => &self.running_mean,
            "running_var" => &self.running_var,
            other => return Err(Error::Checkpoint(format!("unknown norm buffer `{other}`"))),
        };
        if values.len() != self.channels {
            return Err(Error::Checkpoint(format!("buffer `{which}` has {} values, expected {}", values.len(), self.channels)));
        }
        slot.borrow_mut().copy_from_slice(values);
        Ok(())
    }
}
