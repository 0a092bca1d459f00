//! Target corruption by the closed-form marginal of a variance-preserving
//! diffusion with a linear rate `β(t) = β_min + t·(β_max − β_min)`.
//!
//! Given a clean target `y(0)`, the marginal at level `t` has mean
//! `y(0)·exp(−½∫β)` and per-coordinate spread `sqrt(1 − exp(−∫β))`, used as the
//! standard deviation for Gaussian noise and as the scale for Laplace noise.

use crate::error::{check_unit_interval, Error, Result};
use rand::Rng;
use rand_distr::{Open01, StandardNormal};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

pub const DEFAULT_BETA_MIN: f64 = 0.2;
pub const DEFAULT_BETA_MAX: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseFamily {
    Gaussian,
    Laplace,
}

/// `Cnt` uses the schedule as given; `OnlyNoise` pins `β_min = β_max`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseMode {
    Cnt,
    OnlyNoise,
}

impl FromStr for NoiseFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(Self::Gaussian),
            "laplace" => Ok(Self::Laplace),
            other => Err(Error::Config(format!("unknown noise family `{other}` (gaussian | laplace)"))),
        }
    }
}

impl fmt::Display for NoiseFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Gaussian => "gaussian",
            Self::Laplace => "laplace",
        })
    }
}

impl FromStr for NoiseMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cnt" => Ok(Self::Cnt),
            "only-noise" => Ok(Self::OnlyNoise),
            other => Err(Error::Config(format!("unknown noise mode `{other}` (cnt | only-noise)"))),
        }
    }
}

impl fmt::Display for NoiseMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Cnt => "cnt",
            Self::OnlyNoise => "only-noise",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    beta_min: f64,
    beta_max: f64,
    family: NoiseFamily,
    mode: NoiseMode,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self {
            beta_min: DEFAULT_BETA_MIN,
            beta_max: DEFAULT_BETA_MAX,
            family: NoiseFamily::Gaussian,
            mode: NoiseMode::Cnt,
        }
    }
}

/// Coefficients of the marginal at one noise level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Marginal {
    pub mean_coeff: f64,
    pub std: f64,
}

/// A corrupted target together with its level and the clean original.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyTarget {
    pub y_noisy: Vec<f64>,
    pub t: f64,
    pub y_clean: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeSampling {
    Train,
    Inference,
}

/// `t ~ U[0, 1]` for training, exactly `1` at inference.
pub fn sample_time<R: Rng + ?Sized>(rng: &mut R, mode: TimeSampling) -> f64 {
    match mode {
        TimeSampling::Train => rng.random::<f64>(),
        TimeSampling::Inference => 1.0,
    }
}

/// Laplace(0, 1) by inverting its CDF on `u ∈ (−½, ½)`.
pub fn sample_laplace<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let v: f64 = rng.sample(Open01);
    let u = v - 0.5;
    -u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

impl NoiseSchedule {
    /// Validates `0 ≤ β_min ≤ β_max`. In only-noise mode `β_min` is raised to
    /// `β_max`, so the rate is constant.
    pub fn new(beta_min: f64, beta_max: f64, family: NoiseFamily, mode: NoiseMode) -> Result<Self> {
        if !(beta_min.is_finite() && beta_max.is_finite()) || beta_min < 0.0 {
            return Err(Error::Config(format!("noise.beta_min must be a finite value >= 0, got {beta_min}")));
        }
        if beta_max < beta_min {
            return Err(Error::Config(format!(
                "noise.beta_max ({beta_max}) must be >= noise.beta_min ({beta_min})"
            )));
        }
        let beta_min = match mode {
            NoiseMode::Cnt => beta_min,
            NoiseMode::OnlyNoise => beta_max,
        };
        Ok(Self { beta_min, beta_max, family, mode })
    }

    /// Default rates with the given family and mode.
    pub fn with(family: NoiseFamily, mode: NoiseMode) -> Self {
        Self::new(DEFAULT_BETA_MIN, DEFAULT_BETA_MAX, family, mode).expect("defaults are valid")
    }

    pub fn beta_min(&self) -> f64 {
        self.beta_min
    }

    pub fn beta_max(&self) -> f64 {
        self.beta_max
    }

    pub fn family(&self) -> NoiseFamily {
        self.family
    }

    pub fn mode(&self) -> NoiseMode {
        self.mode
    }

    pub fn beta(&self, t: f64) -> Result<f64> {
        check_unit_interval("t", t)?;
        Ok(self.beta_min + t * (self.beta_max - self.beta_min))
    }

    /// `∫₀ᵗ β(s) ds = β_min·t + (β_max − β_min)·t²/2`.
    pub fn beta_integral(&self, t: f64) -> Result<f64> {
        check_unit_interval("t", t)?;
        Ok(self.beta_min * t + 0.5 * (self.beta_max - self.beta_min) * t * t)
    }

    pub fn marginal_params(&self, t: f64) -> Result<Marginal> {
        let b = self.beta_integral(t)?;
        Ok(Marginal {
            mean_coeff: (-0.5 * b).exp(),
            // 1 − e^{−b} loses digits for tiny b
            std: (-(-b).exp_m1()).sqrt(),
        })
    }

    /// Draws `y(t)` given `y(0)`. One noise draw is consumed per coordinate
    /// even at `t = 0`, so stream positions do not depend on `t`.
    pub fn corrupt<R: Rng + ?Sized>(&self, y_clean: &[f64], t: f64, rng: &mut R) -> Result<NoisyTarget> {
        let Marginal { mean_coeff, std } = self.marginal_params(t)?;
        let y_noisy = y_clean
            .iter()
            .map(|&y| mean_coeff * y + std * self.standard_draw(rng))
            .collect();
        Ok(NoisyTarget {
            y_noisy,
            t,
            y_clean: y_clean.to_vec(),
        })
    }

    /// Pure noise of the configured family: the hint used at inference.
    pub fn pure_noise<R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> Vec<f64> {
        pure_noise(self.family, len, rng)
    }

    fn standard_draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        standard_draw(self.family, rng)
    }
}

fn standard_draw<R: Rng + ?Sized>(family: NoiseFamily, rng: &mut R) -> f64 {
    match family {
        NoiseFamily::Gaussian => rng.sample(StandardNormal),
        NoiseFamily::Laplace => sample_laplace(rng),
    }
}

/// `len` standard draws of `family`: N(0, 1) or Laplace(0, 1).
pub fn pure_noise<R: Rng + ?Sized>(family: NoiseFamily, len: usize, rng: &mut R) -> Vec<f64> {
    (0..len).map(|_| standard_draw(family, rng)).collect()
}
