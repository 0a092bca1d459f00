//! Isotropic Gaussian clusters, one per class.

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobConfig {
    pub num_classes: usize,
    pub input_dim: usize,
    pub sigma: f64,
    /// Random centers are drawn from `U[−spread, spread]^d`.
    pub center_spread: f64,
    /// Minimum pairwise distance between random centers.
    pub min_separation: f64,
    pub train_size: usize,
    pub test_size: usize,
    /// Fixed centers override the random draw.
    pub centers: Option<Vec<Vec<f64>>>,
}

impl Default for BlobConfig {
    fn default() -> Self {
        Self {
            num_classes: 4,
            input_dim: 8,
            sigma: 0.6,
            center_spread: 1.0,
            min_separation: 1.5,
            train_size: 1024,
            test_size: 1000,
            centers: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlobTask {
    pub centers: Vec<Vec<f64>>,
    pub train: Dataset,
    pub test: Dataset,
}

impl BlobConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config(format!("blobs.classes must be >= 2, got {}", self.num_classes)));
        }
        if self.input_dim < 2 {
            return Err(Error::Config(format!("blobs.dim must be >= 2, got {}", self.input_dim)));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("blobs.sigma must be >= 0, got {}", self.sigma)));
        }
        if self.train_size == 0 || self.test_size == 0 {
            return Err(Error::Config("data.train_size and data.test_size must be >= 1".into()));
        }
        if let Some(c) = &self.centers {
            if c.len() != self.num_classes || c.iter().any(|v| v.len() != self.input_dim) {
                return Err(Error::Config("fixed blob centers must be classes × dim".into()));
            }
            for i in 0..c.len() {
                for j in 0..i {
                    if c[i] == c[j] {
                        return Err(Error::Config(format!("blob centers {j} and {i} coincide")));
                    }
                }
            }
        }
        Ok(())
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn draw_centers(cfg: &BlobConfig, rng: &mut impl Rng) -> Result<Vec<Vec<f64>>> {
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(cfg.num_classes);
    let mut attempts = 0;
    while centers.len() < cfg.num_classes {
        attempts += 1;
        if attempts > 10_000 {
            return Err(Error::Generation(format!(
                "could not place {} centers {} apart in [-{s}, {s}]^{}",
                cfg.num_classes,
                cfg.min_separation,
                cfg.input_dim,
                s = cfg.center_spread
            )));
        }
        let c: Vec<f64> = (0..cfg.input_dim)
            .map(|_| rng.random_range(-cfg.center_spread..=cfg.center_spread))
            .collect();
        if centers.iter().all(|o| distance(o, &c) >= cfg.min_separation.max(f64::MIN_POSITIVE)) {
            centers.push(c);
        }
    }
    Ok(centers)
}

fn draw_split(cfg: &BlobConfig, centers: &[Vec<f64>], size: usize, rng: &mut impl Rng) -> Result<Dataset> {
    let examples = (0..size)
        .map(|i| {
            let class = i % cfg.num_classes;
            let x = centers[class]
                .iter()
                .map(|&m| m + cfg.sigma * rng.sample::<f64, _>(StandardNormal))
                .collect();
            (x, vec![class])
        })
        .collect();
    Dataset::from_examples(vec![cfg.input_dim], vec![cfg.num_classes], examples)
}

/// Centers, train and test splits each come from their own stream of `seed`.
/// Labels cycle through the classes, so every split is balanced within one.
pub fn gen_blobs(cfg: &BlobConfig, seed: u64) -> Result<BlobTask> {
    cfg.validate()?;
    let centers = match &cfg.centers {
        Some(c) => c.clone(),
        None => draw_centers(cfg, &mut stream(seed, Stream::Centers))?,
    };
    let train = draw_split(cfg, &centers, cfg.train_size, &mut stream(seed, Stream::TrainData))?;
    let test = draw_split(cfg, &centers, cfg.test_size, &mut stream(seed, Stream::TestData))?;
    Ok(BlobTask { centers, train, test })
}

/// Index of the closest center.
pub fn nearest_center(centers: &[Vec<f64>], x: &[f64]) -> usize {
    centers
        .iter()
        .enumerate()
        .map(|(i, c)| (i, distance(c, x)))
        .fold((0, f64::INFINITY), |best, (i, d)| if d < best.1 { (i, d) } else { best })
        .0
}
