//! Trainable backbones sharing one forward interface across the three modes.
//!
//! * `baseline`: plain normalization with a learned affine map.
//! * `cnt` and `only-noise`: every normalization is a [`ConditionalNorm`]
//!   driven by the embedding of `(t, y(t))`. The two modes share the
//!   architecture; they differ only in the noise schedule used in training.

use crate::autodiff::{Parameter, Tensor};
use crate::conditioning::{ConditionalNorm, Embedder, FourierTimeEmbedding, DEFAULT_EMBED_WIDTH, DEFAULT_NUM_FREQUENCIES};
use crate::error::{Error, Result};
use crate::nn::{dropout, Activation, Conv2d, Linear, Module, NormKind};
use crate::noise::{pure_noise, NoiseFamily};
use crate::rng::Rng;
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackboneKind {
    Mlp,
    #[serde(rename = "smallcnn")]
    SmallCnn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelMode {
    Baseline,
    OnlyNoise,
    Cnt,
}

impl ModelMode {
    pub fn is_conditioned(self) -> bool {
        !matches!(self, Self::Baseline)
    }

    pub const ALL: [ModelMode; 3] = [Self::Baseline, Self::OnlyNoise, Self::Cnt];
}

impl FromStr for BackboneKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlp" => Ok(Self::Mlp),
            "smallcnn" => Ok(Self::SmallCnn),
            other => Err(Error::Config(format!("unknown backbone `{other}` (mlp | smallcnn)"))),
        }
    }
}

impl fmt::Display for BackboneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Mlp => "mlp",
            Self::SmallCnn => "smallcnn",
        })
    }
}

impl FromStr for ModelMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Self::Baseline),
            "only-noise" => Ok(Self::OnlyNoise),
            "cnt" => Ok(Self::Cnt),
            other => Err(Error::Config(format!("unknown mode `{other}` (baseline | only-noise | cnt)"))),
        }
    }
}

impl fmt::Display for ModelMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Baseline => "baseline",
            Self::OnlyNoise => "only-noise",
            Self::Cnt => "cnt",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub backbone: BackboneKind,
    /// Per-example input extents: `[d]` for the MLP, `[C, H, W]` for the CNN.
    pub input_shape: Vec<usize>,
    pub channels: usize,
    pub num_blocks: usize,
    pub activation: Activation,
    pub heads: Vec<usize>,
    pub mode: ModelMode,
    pub dropout_p: f64,
    pub norm_kind: NormKind,
    pub embed_width: usize,
    pub num_frequencies: usize,
    pub noise_family: NoiseFamily,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            backbone: BackboneKind::Mlp,
            input_shape: vec![2],
            channels: 8,
            num_blocks: 2,
            activation: Activation::Relu,
            heads: vec![2],
            mode: ModelMode::Cnt,
            dropout_p: 0.1,
            norm_kind: NormKind::GroupNorm,
            embed_width: DEFAULT_EMBED_WIDTH,
            num_frequencies: DEFAULT_NUM_FREQUENCIES,
            noise_family: NoiseFamily::Gaussian,
        }
    }
}

/// Kernel, stride and padding of CNN block `i` given its input extent.
/// Blocks halve the resolution (4×4 kernel, stride 2) until it reaches 4.
fn cnn_block_geometry(extent: usize) -> (usize, usize, usize) {
    if extent >= 8 {
        (4, 2, 1)
    } else {
        (3, 1, 1)
    }
}

impl ModelConfig {
    pub fn target_width(&self) -> usize {
        self.heads.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.heads.is_empty() || self.heads.iter().any(|&h| h < 2) {
            return bad(format!("model.heads must be non-empty with widths >= 2, got {:?}", self.heads));
        }
        if self.channels == 0 {
            return bad("model.channels must be >= 1".into());
        }
        if self.num_blocks == 0 {
            return bad("model.num_blocks must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!("model.dropout must be in [0, 1), got {}", self.dropout_p));
        }
        match (self.backbone, self.input_shape.as_slice()) {
            (BackboneKind::Mlp, [d]) if *d >= 1 => {}
            (BackboneKind::SmallCnn, [c, h, w]) if *c >= 1 => {
                let (mut h, mut w) = (*h, *w);
                for _ in 0..self.num_blocks {
                    let (_, stride, _) = cnn_block_geometry(h.min(w));
                    if stride == 2 && (h % 2 != 0 || w % 2 != 0) {
                        return bad(format!("smallcnn cannot halve an odd extent {h}x{w}"));
                    }
                    if h < 3 || w < 3 {
                        return bad(format!("smallcnn input too small for {} blocks", self.num_blocks));
                    }
                    h /= stride;
                    w /= stride;
                }
            }
            (kind, shape) => return bad(format!("input shape {shape:?} does not suit backbone {kind}")),
        }
        if self.mode.is_conditioned() {
            if self.embed_width < 2 || self.embed_width % 2 != 0 {
                return bad(format!("cond.embed_width must be even and >= 2, got {}", self.embed_width));
            }
            if self.num_frequencies == 0 || self.num_frequencies > 52 {
                return bad(format!("cond.num_frequencies must be in 1..=52, got {}", self.num_frequencies));
            }
        }
        Ok(())
    }
}

/// Noisy targets and levels for one batch.
#[derive(Debug, Clone)]
pub struct Conditioning<T: Scalar> {
    /// `[N × target_width]`
    pub y_noisy: Tensor<T>,
    pub t: Vec<T>,
}

/// Forward-pass phase. Training carries the dropout stream.
pub enum Phase<'a> {
    Train(&'a mut Rng),
    Eval,
}

impl Phase<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Phase::Train(_))
    }
}

#[derive(Debug, Clone)]
pub struct ModelOutput<T: Scalar> {
    pub logits: Vec<Tensor<T>>,
}

impl<T: Scalar> ModelOutput<T> {
    /// Arg-max class per example, per head.
    pub fn argmax(&self) -> Vec<Vec<usize>> {
        self.logits
            .iter()
            .map(|l| {
                let width = l.shape()[1];
                l.data()
                    .chunks(width)
                    .map(|row| {
                        row.iter()
                            .enumerate()
                            .fold((0, T::neg_infinity()), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                            .0
                    })
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug)]
enum Block<T: Scalar> {
    Dense(Linear<T>),
    Conv(Conv2d<T>),
}

#[derive(Debug)]
struct Stage<T: Scalar> {
    layer: Block<T>,
    norm: ConditionalNorm<T>,
}

#[derive(Debug)]
pub struct Model<T: Scalar> {
    config: ModelConfig,
    stages: Vec<Stage<T>>,
    heads: Vec<Linear<T>>,
    embedder: Option<Embedder<T>>,
}

/// Parameter counts by component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterCounts {
    pub backbone: usize,
    pub conditioning: usize,
    pub total: usize,
}

impl<T: Scalar> Model<T> {
    /// Backbone and head weights are drawn from `rng` first, the embedding
    /// afterwards, so models of different modes built from equal streams share
    /// their backbone weights.
    pub fn new(config: ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let cond_width = config.mode.is_conditioned().then_some(config.embed_width);
        let c = config.channels;
        let mut stages = Vec::with_capacity(config.num_blocks);
        match config.backbone {
            BackboneKind::Mlp => {
                let mut inputs = config.input_shape[0];
                for i in 0..config.num_blocks {
                    let name = format!("backbone.{i}");
                    stages.push(Stage {
                        layer: Block::Dense(Linear::new(&format!("{name}.linear"), inputs, c, rng)),
                        norm: ConditionalNorm::new(&format!("{name}.norm"), config.norm_kind, c, cond_width),
                    });
                    inputs = c;
                }
            }
            BackboneKind::SmallCnn => {
                let mut in_ch = config.input_shape[0];
                let mut extent = config.input_shape[1].min(config.input_shape[2]);
                for i in 0..config.num_blocks {
                    let name = format!("backbone.{i}");
                    let (k, s, p) = cnn_block_geometry(extent);
                    stages.push(Stage {
                        layer: Block::Conv(Conv2d::new(&format!("{name}.conv"), in_ch, c, k, s, p, rng)),
                        norm: ConditionalNorm::new(&format!("{name}.norm"), config.norm_kind, c, cond_width),
                    });
                    in_ch = c;
                    extent /= s;
                }
            }
        }
        let heads = config
            .heads
            .iter()
            .enumerate()
            .map(|(i, &h)| Linear::new(&format!("head.{i}"), c, h, rng))
            .collect();
        let embedder = match cond_width {
            Some(e) => Some(Embedder::new(
                config.target_width(),
                e,
                FourierTimeEmbedding::new(config.num_frequencies),
                rng,
            )?),
            None => None,
        };
        Ok(Self { config, stages, heads, embedder })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn mode(&self) -> ModelMode {
        self.config.mode
    }

    /// `x: [N, input_shape...]`. Conditioning is required in cnt / only-noise
    /// mode and ignored in baseline mode.
    pub fn forward(&self, x: &Tensor<T>, cond: Option<&Conditioning<T>>, phase: Phase<'_>) -> Result<ModelOutput<T>> {
        let n = self.check_input(x)?;
        let emb = match (&self.embedder, cond) {
            (None, _) => None,
            (Some(_), None) => {
                return Err(Error::Usage(format!(
                    "{} model needs noisy targets and noise levels",
                    self.config.mode
                )))
            }
            (Some(e), Some(c)) => {
                if c.t.len() != n {
                    return Err(Error::Usage(format!("{} noise levels for a batch of {n}", c.t.len())));
                }
                Some(e.embed(&c.y_noisy, &c.t)?)
            }
        };
        let train = phase.is_train();
        let mut h = x.clone();
        for stage in &self.stages {
            h = match &stage.layer {
                Block::Dense(l) => l.forward(&h)?,
                Block::Conv(c) => c.forward(&h)?,
            };
            h = stage.norm.forward(&h, emb.as_ref(), train)?;
            h = self.config.activation.apply(&h);
        }
        if self.config.backbone == BackboneKind::SmallCnn {
            h = h.global_avg_pool()?;
        }
        if let Phase::Train(rng) = phase {
            h = dropout(&h, self.config.dropout_p, rng)?;
        }
        let logits = self.heads.iter().map(|head| head.forward(&h)).collect::<Result<_>>()?;
        Ok(ModelOutput { logits })
    }

    /// Inference: conditioned models see one draw of pure noise at `t = 1`;
    /// baseline models ignore `rng` entirely.
    pub fn predict(&self, x: &Tensor<T>, rng: &mut Rng) -> Result<ModelOutput<T>> {
        if !self.config.mode.is_conditioned() {
            return self.forward(x, None, Phase::Eval);
        }
        let n = self.check_input(x)?;
        let width = self.config.target_width();
        let noise = pure_noise(self.config.noise_family, n * width, rng);
        let cond = Conditioning {
            y_noisy: Tensor::new(&[n, width], noise.into_iter().map(T::of).collect())?,
            t: vec![T::one(); n],
        };
        self.forward(x, Some(&cond), Phase::Eval)
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<usize> {
        match x.shape().split_first() {
            Some((&n, rest)) if rest == self.config.input_shape.as_slice() => Ok(n),
            _ => Err(Error::Dimension {
                op: "model input",
                lhs: x.shape().to_vec(),
                rhs: self.config.input_shape.clone(),
            }),
        }
    }

    fn backbone_parameters(&self) -> Vec<&Parameter<T>> {
        let mut p = Vec::new();
        for stage in &self.stages {
            match &stage.layer {
                Block::Dense(l) => p.extend(l.parameters()),
                Block::Conv(c) => p.extend(c.parameters()),
            }
            p.extend(stage.norm.parameters().into_iter().filter(|q| !is_projection(q)));
        }
        for head in &self.heads {
            p.extend(head.parameters());
        }
        p
    }

    fn conditioning_parameters(&self) -> Vec<&Parameter<T>> {
        let mut p: Vec<&Parameter<T>> = self
            .stages
            .iter()
            .flat_map(|s| s.norm.parameters().into_iter().filter(|q| is_projection(q)))
            .collect();
        if let Some(e) = &self.embedder {
            p.extend(e.parameters());
        }
        p
    }

    pub fn parameter_counts(&self) -> ParameterCounts {
        let backbone = self.backbone_parameters().iter().map(|p| p.numel()).sum();
        let conditioning = self.conditioning_parameters().iter().map(|p| p.numel()).sum();
        ParameterCounts {
            backbone,
            conditioning,
            total: backbone + conditioning,
        }
    }

    pub fn zero_grad(&self) {
        self.parameters().iter().for_each(|p| p.zero_grad());
    }

    /// Batch-norm running statistics, keyed `<norm name>.<buffer>`.
    pub fn buffers(&self) -> Vec<(String, Vec<T>)> {
        self.stages
            .iter()
            .enumerate()
            .flat_map(|(i, s)| {
                s.norm
                    .norm()
                    .buffers()
                    .into_iter()
                    .map(move |(name, v)| (format!("backbone.{i}.norm.{name}"), v))
            })
            .collect()
    }

    pub fn load_buffer(&self, key: &str, values: &[T]) -> Result<()> {
        let rest = key
            .strip_prefix("backbone.")
            .ok_or_else(|| Error::Checkpoint(format!("unknown buffer `{key}`")))?;
        let (index, buffer) = rest
            .split_once(".norm.")
            .ok_or_else(|| Error::Checkpoint(format!("unknown buffer `{key}`")))?;
        let stage = index
            .parse::<usize>()
            .ok()
            .and_then(|i| self.stages.get(i))
            .ok_or_else(|| Error::Checkpoint(format!("unknown buffer `{key}`")))?;
        stage.norm.norm().load_buffer(buffer, values)
    }

    /// Copies every parameter whose name and shape also exist in `other`.
    /// Returns the number of parameters copied.
    pub fn copy_matching_from(&self, other: &Model<T>) -> usize {
        let theirs = other.parameters();
        let mut copied = 0;
        for p in self.parameters() {
            if let Some(q) = theirs.iter().find(|q| q.name() == p.name() && q.shape() == p.shape()) {
                p.set_values(&q.values());
                copied += 1;
            }
        }
        copied
    }
}

fn is_projection<T: Scalar>(p: &Parameter<T>) -> bool {
    p.name().ends_with(".proj_scale") || p.name().ends_with(".proj_shift")
}

impl<T: Scalar> Module<T> for Model<T> {
    fn parameters(&self) -> Vec<&Parameter<T>> {
        let mut p = self.backbone_parameters();
        p.extend(self.conditioning_parameters());
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    fn mlp(mode: ModelMode) -> ModelConfig {
        ModelConfig {
            input_shape: vec![3],
            heads: vec![4],
            mode,
            embed_width: 16,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn validation_catches_bad_configs() {
        let mut c = mlp(ModelMode::Cnt);
        c.heads.clear();
        assert!(c.validate().is_err());
        let mut c = mlp(ModelMode::Cnt);
        c.channels = 0;
        assert!(c.validate().is_err());
        let c = ModelConfig {
            backbone: BackboneKind::SmallCnn,
            input_shape: vec![1, 9, 9],
            ..mlp(ModelMode::Baseline)
        };
        assert!(c.validate().is_err());
        let c = ModelConfig {
            backbone: BackboneKind::SmallCnn,
            input_shape: vec![1, 64, 64],
            num_blocks: 4,
            ..mlp(ModelMode::Baseline)
        };
        c.validate().unwrap();
    }

    #[test]
    fn cnt_requires_conditioning() {
        let model = Model::<f64>::new(mlp(ModelMode::Cnt), &mut stream(0, Stream::Init)).unwrap();
        let x = Tensor::zeros(&[2, 3]);
        assert!(matches!(model.forward(&x, None, Phase::Eval), Err(Error::Usage(_))));
    }

    #[test]
    fn parameter_counts_differ_by_conditioning_only() {
        let base = Model::<f64>::new(mlp(ModelMode::Baseline), &mut stream(0, Stream::Init)).unwrap();
        let cnt = Model::<f64>::new(mlp(ModelMode::Cnt), &mut stream(0, Stream::Init)).unwrap();
        let (b, c) = (base.parameter_counts(), cnt.parameter_counts());
        assert_eq!(b.conditioning, 0);
        assert_eq!(b.backbone, c.backbone);
        assert!(c.total > b.total);
        // two norms × two projections of 16×8, plus two 2-layer MLPs of width 8
        let fourier = 2 * DEFAULT_NUM_FREQUENCIES;
        let embed = (4 * 8 + 8) + (8 * 8 + 8) + (fourier * 8 + 8) + (8 * 8 + 8);
        assert_eq!(c.conditioning, 2 * 2 * 16 * 8 + embed);
    }

    #[test]
    fn argmax_per_head() {
        let out = ModelOutput {
            logits: vec![
                Tensor::<f64>::new(&[2, 3], vec![0.1, 0.9, 0.0, 2.0, -1.0, 1.0]).unwrap(),
                Tensor::<f64>::new(&[2, 2], vec![-1.0, 1.0, 3.0, 1.0]).unwrap(),
            ],
        };
        assert_eq!(out.argmax(), vec![vec![1, 0], vec![1, 0]]);
    }
}
