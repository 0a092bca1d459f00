//! Small models and a parameter-level gradient check shared by the model
//! tests and the acceptance suite.
#![allow(dead_code)]

use crate::common::{central_difference_at, rel_err, uniform, FD_STEP};
use cntlab::models::{BackboneKind, Conditioning, Model, ModelConfig, ModelMode, Phase};
use cntlab::nn::{Activation, Module, NormKind};
use cntlab::rng::{stream, Stream};
use cntlab::training::objective;
use cntlab::Tensor;

/// A four-block smallcnn on `1 × 16 × 16` inputs with two binary heads.
pub fn small_cnn(mode: ModelMode, activation: Activation, norm_kind: NormKind, seed: u64) -> Model<f64> {
    let config = ModelConfig {
        backbone: BackboneKind::SmallCnn,
        input_shape: vec![1, 16, 16],
        channels: 8,
        num_blocks: 4,
        activation,
        heads: vec![2, 2],
        mode,
        dropout_p: 0.0,
        norm_kind,
        embed_width: 16,
        ..ModelConfig::default()
    };
    Model::new(config, &mut stream(seed, Stream::Init)).unwrap()
}

/// Moves every parameter off its initial value, including zero-initialized
/// projections, so that no gradient path is trivially zero.
pub fn perturb(model: &Model<f64>, seed: u64) {
    for (k, p) in model.parameters().iter().enumerate() {
        let noise = uniform(p.numel(), -0.3, 0.3, seed + k as u64);
        let v: Vec<f64> = p.values().iter().zip(noise).map(|(a, b)| a + b).collect();
        p.set_values(&v);
    }
}

/// A batch of inputs, one-hot targets and conditioning for [`small_cnn`].
pub struct Probe {
    pub x: Tensor,
    pub targets: Vec<f64>,
    pub cond: Option<Conditioning<f64>>,
}

pub fn probe(model: &Model<f64>, n: usize, seed: u64) -> Probe {
    let x = Tensor::new(&[n, 1, 16, 16], uniform(n * 256, -1.0, 1.0, seed)).unwrap();
    let labels = uniform(2 * n, 0.0, 2.0, seed + 1);
    let targets: Vec<f64> = labels
        .iter()
        .flat_map(|&u| if u < 1.0 { [1.0, 0.0] } else { [0.0, 1.0] })
        .collect();
    let cond = model.mode().is_conditioned().then(|| Conditioning {
        y_noisy: Tensor::new(&[n, 4], uniform(4 * n, -1.5, 1.5, seed + 2)).unwrap(),
        t: uniform(n, 0.0, 1.0, seed + 3),
    });
    Probe { x, targets, cond }
}

pub struct GradReport {
    pub coordinates: usize,
    pub max_rel_err: f64,
    pub worst: String,
}

/// Central differences of the training objective against backprop on up to
/// `per_param` evenly spaced coordinates of every parameter.
pub fn model_gradcheck(model: &Model<f64>, p: &Probe, per_param: usize) -> GradReport {
    let loss = || {
        let out = model.forward(&p.x, p.cond.as_ref(), Phase::Eval).unwrap();
        objective(&out.logits, &p.targets, &model.config().heads).unwrap()
    };
    model.zero_grad();
    loss().backward().unwrap();
    let mut report = GradReport {
        coordinates: 0,
        max_rel_err: 0.0,
        worst: String::new(),
    };
    for param in model.parameters() {
        let analytic = param.grad();
        let base = param.values();
        let step = (base.len() / per_param).max(1);
        for i in (0..base.len()).step_by(step).take(per_param) {
            let eval = |probe: &[f64]| {
                param.set_values(probe);
                let v = loss().item();
                param.set_values(&base);
                v
            };
            let numeric = central_difference_at(eval, &base, i, FD_STEP);
            let err = rel_err(analytic[i], numeric);
            report.coordinates += 1;
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = format!("{}[{i}]: {} vs {numeric}", param.name(), analytic[i]);
            }
        }
    }
    report
}
