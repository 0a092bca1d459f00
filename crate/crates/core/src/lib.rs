//! Training laboratory for conditioning networks on noisy copies of their own
//! targets.
//!
//! During training each target `y` is corrupted to `y(t)` by a variance-preserving
//! noise process at a random level `t ∈ [0, 1]`, and the network sees
//! `(x, y(t), t)` while its loss is still taken against the clean `y`. At
//! inference `t = 1`, so the hint is pure noise.
//!
//! The numeric layers are generic over [`Scalar`]; the aliases below pin the
//! double-precision instantiation that training and the CLI use.

pub mod autodiff;
pub mod checkpoint;
pub mod conditioning;
pub mod config;
pub mod error;
pub mod experiment;
pub mod models;
pub mod nn;
pub mod noise;
pub mod report;
pub mod rng;
pub mod scalar;
pub mod tasks;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor = autodiff::Tensor<f64>;
pub type Tensor32 = autodiff::Tensor<f32>;
pub type Parameter = autodiff::Parameter<f64>;
