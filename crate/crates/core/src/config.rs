//! Experiment configuration. Values come from task defaults, then a flat
//! `key = value` file, then the output-root environment variable, then
//! `--key value` flags. Unknown keys are errors.

use crate::error::{Error, Result};
use crate::models::{BackboneKind, ModelConfig, ModelMode};
use crate::nn::{Activation, NormKind};
use crate::noise::{NoiseFamily, NoiseMode, NoiseSchedule, DEFAULT_BETA_MAX, DEFAULT_BETA_MIN};
use crate::tasks::{BlobConfig, IMAGE_SIZE};
use crate::training::OptimizerConfig;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

/// Overrides `output_dir` when set (flags still win).
pub const OUTPUT_ROOT_ENV: &str = "CNTLAB_OUTPUT_ROOT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    Blobs,
    Shapes,
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blobs" => Ok(Self::Blobs),
            "shapes" => Ok(Self::Shapes),
            other => Err(Error::Config(format!("unknown task `{other}` (expected blobs or shapes)"))),
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Blobs => "blobs",
            Self::Shapes => "shapes",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub task: TaskKind,
    pub mode: ModelMode,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub output_dir: PathBuf,
    pub mixup: bool,
    pub mixup_alpha: f64,
    pub beta_min: f64,
    pub beta_max: f64,
    pub noise_family: NoiseFamily,
    /// Input shape, heads, mode and noise family are filled in from the
    /// fields above by [`ExperimentConfig::model_config`].
    pub model: ModelConfig,
    pub optim: OptimizerConfig,
    pub train_size: usize,
    pub test_size: usize,
    pub blobs: BlobConfig,
}

/// Every accepted key, in echo order.
pub const KEYS: &[&str] = &[
    "task",
    "mode",
    "seed",
    "epochs",
    "batch_size",
    "output_dir",
    "mixup",
    "mixup.alpha",
    "noise.beta_min",
    "noise.beta_max",
    "noise.family",
    "noise.mode",
    "cond.embed_width",
    "cond.num_frequencies",
    "model.backbone",
    "model.channels",
    "model.num_blocks",
    "model.activation",
    "model.dropout",
    "cond.norm_kind",
    "optim.lr",
    "optim.momentum",
    "optim.weight_decay",
    "data.train_size",
    "data.test_size",
    "blobs.classes",
    "blobs.dim",
    "blobs.sigma",
    "blobs.spread",
    "blobs.min_separation",
];

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::for_task(TaskKind::Blobs)
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key}: cannot parse `{value}`: {e}")))
}

impl ExperimentConfig {
    /// Task-dependent defaults: an MLP with mixup for blobs, the small CNN
    /// without mixup for shapes. Shapes use batch norm, since per-image group
    /// statistics wash out how many vertex clusters an image holds, and Mish.
    pub fn for_task(task: TaskKind) -> Self {
        let blobs = BlobConfig::default();
        let (model, mixup, train_size, test_size) = match task {
            TaskKind::Blobs => (
                ModelConfig {
                    backbone: BackboneKind::Mlp,
                    num_blocks: 2,
                    ..ModelConfig::default()
                },
                true,
                blobs.train_size,
                blobs.test_size,
            ),
            TaskKind::Shapes => (
                ModelConfig {
                    backbone: BackboneKind::SmallCnn,
                    num_blocks: 4,
                    norm_kind: NormKind::BatchNorm,
                    activation: Activation::Mish,
                    ..ModelConfig::default()
                },
                false,
                4096,
                512,
            ),
        };
        Self {
            task,
            mode: ModelMode::Cnt,
            seed: 0,
            epochs: 100,
            batch_size: 128,
            output_dir: PathBuf::from("runs"),
            mixup,
            mixup_alpha: 1.0,
            beta_min: DEFAULT_BETA_MIN,
            beta_max: DEFAULT_BETA_MAX,
            noise_family: NoiseFamily::Gaussian,
            model,
            optim: OptimizerConfig::default(),
            train_size,
            test_size,
            blobs,
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "task" => self.task = v.parse()?,
            "mode" => self.mode = v.parse()?,
            "seed" => self.seed = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "output_dir" => self.output_dir = PathBuf::from(v),
            "mixup" => self.mixup = parse(key, v)?,
            "mixup.alpha" => self.mixup_alpha = parse(key, v)?,
            "noise.beta_min" => self.beta_min = parse(key, v)?,
            "noise.beta_max" => self.beta_max = parse(key, v)?,
            "noise.family" => self.noise_family = v.parse()?,
            "noise.mode" => self.set_noise_mode(v.parse()?)?,
            "cond.embed_width" => self.model.embed_width = parse(key, v)?,
            "cond.num_frequencies" => self.model.num_frequencies = parse(key, v)?,
            "model.backbone" => self.model.backbone = v.parse()?,
            "model.channels" => self.model.channels = parse(key, v)?,
            "model.num_blocks" => self.model.num_blocks = parse(key, v)?,
            "model.activation" => self.model.activation = v.parse()?,
            "model.dropout" => self.model.dropout_p = parse(key, v)?,
            "cond.norm_kind" => self.model.norm_kind = v.parse()?,
            "optim.lr" => self.optim.learning_rate = parse(key, v)?,
            "optim.momentum" => self.optim.momentum = parse(key, v)?,
            "optim.weight_decay" => self.optim.weight_decay = parse(key, v)?,
            "data.train_size" => self.train_size = parse(key, v)?,
            "data.test_size" => self.test_size = parse(key, v)?,
            "blobs.classes" => self.blobs.num_classes = parse(key, v)?,
            "blobs.dim" => self.blobs.input_dim = parse(key, v)?,
            "blobs.sigma" => self.blobs.sigma = parse(key, v)?,
            "blobs.spread" => self.blobs.center_spread = parse(key, v)?,
            "blobs.min_separation" => self.blobs.min_separation = parse(key, v)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "task" => self.task.to_string(),
            "mode" => self.mode.to_string(),
            "seed" => self.seed.to_string(),
            "epochs" => self.epochs.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "output_dir" => self.output_dir.display().to_string(),
            "mixup" => self.mixup.to_string(),
            "mixup.alpha" => self.mixup_alpha.to_string(),
            "noise.beta_min" => self.beta_min.to_string(),
            "noise.beta_max" => self.beta_max.to_string(),
            "noise.family" => self.noise_family.to_string(),
            "noise.mode" => self.noise_mode().to_string(),
            "cond.embed_width" => self.model.embed_width.to_string(),
            "cond.num_frequencies" => self.model.num_frequencies.to_string(),
            "model.backbone" => self.model.backbone.to_string(),
            "model.channels" => self.model.channels.to_string(),
            "model.num_blocks" => self.model.num_blocks.to_string(),
            "model.activation" => self.model.activation.to_string(),
            "model.dropout" => self.model.dropout_p.to_string(),
            "cond.norm_kind" => self.model.norm_kind.to_string(),
            "optim.lr" => self.optim.learning_rate.to_string(),
            "optim.momentum" => self.optim.momentum.to_string(),
            "optim.weight_decay" => self.optim.weight_decay.to_string(),
            "data.train_size" => self.train_size.to_string(),
            "data.test_size" => self.test_size.to_string(),
            "blobs.classes" => self.blobs.num_classes.to_string(),
            "blobs.dim" => self.blobs.input_dim.to_string(),
            "blobs.sigma" => self.blobs.sigma.to_string(),
            "blobs.spread" => self.blobs.center_spread.to_string(),
            "blobs.min_separation" => self.blobs.min_separation.to_string(),
            _ => return None,
        })
    }

    /// `(key, value)` for every key, in [`KEYS`] order.
    pub fn echo(&self) -> Vec<(String, String)> {
        KEYS.iter()
            .map(|&k| (k.to_string(), self.get(k).expect("every listed key has a value")))
            .collect()
    }

    /// The echo as a config file that parses back to `self`.
    pub fn to_file_string(&self) -> String {
        self.echo().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// The corruption variant implied by `mode`; baseline runs report the
    /// nominal `cnt` schedule they never sample from.
    pub fn noise_mode(&self) -> NoiseMode {
        match self.mode {
            ModelMode::OnlyNoise => NoiseMode::OnlyNoise,
            ModelMode::Baseline | ModelMode::Cnt => NoiseMode::Cnt,
        }
    }

    /// `noise.mode` picks between the two conditioned modes.
    fn set_noise_mode(&mut self, noise: NoiseMode) -> Result<()> {
        self.mode = match (self.mode, noise) {
            (ModelMode::Baseline, NoiseMode::Cnt) => ModelMode::Baseline,
            (ModelMode::Baseline, NoiseMode::OnlyNoise) => {
                return Err(Error::Config(
                    "noise.mode = only-noise needs mode = only-noise or cnt; baseline runs draw no noise".into(),
                ))
            }
            (_, NoiseMode::Cnt) => ModelMode::Cnt,
            (_, NoiseMode::OnlyNoise) => ModelMode::OnlyNoise,
        };
        Ok(())
    }

    pub fn noise_schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::new(self.beta_min, self.beta_max, self.noise_family, self.noise_mode())
    }

    pub fn blob_config(&self) -> BlobConfig {
        BlobConfig {
            train_size: self.train_size,
            test_size: self.test_size,
            ..self.blobs.clone()
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        let (input_shape, heads) = match self.task {
            TaskKind::Blobs => (vec![self.blobs.input_dim], vec![self.blobs.num_classes]),
            TaskKind::Shapes => (vec![1, IMAGE_SIZE, IMAGE_SIZE], vec![2, 2]),
        };
        ModelConfig {
            input_shape,
            heads,
            mode: self.mode,
            noise_family: self.noise_family,
            ..self.model.clone()
        }
    }

    /// Checks every constraint before any compute happens.
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.mixup_alpha.is_finite() && self.mixup_alpha > 0.0) {
            return Err(Error::Config(format!("mixup.alpha must be > 0, got {}", self.mixup_alpha)));
        }
        if self.train_size == 0 || self.test_size == 0 {
            return Err(Error::Config("data.train_size and data.test_size must be >= 1".into()));
        }
        if self.model.channels == 0 {
            return Err(Error::Config("model.channels must be >= 1".into()));
        }
        if self.model.num_blocks == 0 {
            return Err(Error::Config("model.num_blocks must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.model.dropout_p) {
            return Err(Error::Config(format!("model.dropout must be in [0, 1), got {}", self.model.dropout_p)));
        }
        if self.model.embed_width < 2 || self.model.embed_width % 2 != 0 {
            return Err(Error::Config(format!(
                "cond.embed_width must be even and >= 2, got {}",
                self.model.embed_width
            )));
        }
        if !(1..=52).contains(&self.model.num_frequencies) {
            return Err(Error::Config(format!(
                "cond.num_frequencies must be in 1..=52, got {}",
                self.model.num_frequencies
            )));
        }
        self.noise_schedule()?;
        self.optim.validate()?;
        if self.task == TaskKind::Blobs {
            self.blob_config().validate()?;
        }
        self.model_config().validate()
    }

    /// Directory of this run under `output_dir`.
    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(self.run_name())
    }

    pub fn run_name(&self) -> String {
        format!("{}-{}-seed{}", self.task, self.mode, self.seed)
    }
}

/// `key = value` lines; blank lines and `#` comments are skipped.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{line}`", n + 1)))?;
        let key = k.trim();
        if key.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", n + 1)));
        }
        pairs.push((key.to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}

/// `--key value` or `--key=value` pairs.
pub fn parse_flags(args: &[String]) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        let flag = arg
            .strip_prefix("--")
            .ok_or_else(|| Error::Config(format!("expected a `--key value` flag, got `{arg}`")))?;
        match flag.split_once('=') {
            Some((k, v)) => pairs.push((k.to_string(), v.to_string())),
            None => {
                let v = it
                    .next()
                    .ok_or_else(|| Error::Config(format!("flag `--{flag}` is missing a value")))?;
                pairs.push((flag.to_string(), v.clone()));
            }
        }
    }
    Ok(pairs)
}

/// Builds a config from an optional file, an optional output-root override
/// and flags, in increasing precedence. The task is resolved first so that
/// task-specific defaults sit underneath everything else.
pub fn parse_config(file: Option<&Path>, flags: &[String], output_root: Option<&str>) -> Result<ExperimentConfig> {
    let file_pairs = match file {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            parse_config_text(&text)?
        }
        None => Vec::new(),
    };
    let flag_pairs = parse_flags(flags)?;
    // a flag beats the file; within each, the last occurrence wins
    let task = flag_pairs
        .iter()
        .rev()
        .chain(file_pairs.iter().rev())
        .find(|(k, _)| k == "task")
        .map(|(_, v)| v.parse::<TaskKind>())
        .transpose()?
        .unwrap_or(TaskKind::Blobs);
    let mut cfg = ExperimentConfig::for_task(task);
    for (k, v) in &file_pairs {
        cfg.set(k, v)?;
    }
    if let Some(root) = output_root.filter(|r| !r.is_empty()) {
        cfg.output_dir = PathBuf::from(root);
    }
    for (k, v) in &flag_pairs {
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}
