//! The training loop pieces: SGD, the step schedule, per-noise-level
//! metrics, one optimization step and evaluation at `t = 1`.

use crate::autodiff::{softmax_rows, Parameter, Tensor};
use crate::error::{Error, Result};
use crate::models::{Conditioning, Model, ModelMode, Phase};
use crate::nn::Module;
use crate::noise::{sample_time, NoiseMode, NoiseSchedule, TimeSampling};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tasks::{Batch, Dataset};
use serde::{Deserialize, Serialize};

pub const DEFAULT_LEARNING_RATE: f64 = 0.1;
pub const DEFAULT_MOMENTUM: f64 = 0.9;
pub const DEFAULT_WEIGHT_DECAY: f64 = 1e-4;
pub const NUM_BUCKETS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: DEFAULT_LEARNING_RATE,
            momentum: DEFAULT_MOMENTUM,
            weight_decay: DEFAULT_WEIGHT_DECAY,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!("optim.lr must be > 0, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("optim.momentum must be in [0, 1), got {}", self.momentum)));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config(format!("optim.weight_decay must be >= 0, got {}", self.weight_decay)));
        }
        Ok(())
    }
}

/// SGD with heavy-ball momentum; weight decay is added to the gradient:
/// `v ← μ·v + g + λ·θ`, `θ ← θ − lr·v`.
#[derive(Debug, Clone)]
pub struct Sgd<T: Scalar> {
    config: OptimizerConfig,
    learning_rate: f64,
    velocity: Vec<Vec<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(config: OptimizerConfig, params: &[&Parameter<T>]) -> Self {
        Self {
            config,
            learning_rate: config.learning_rate,
            velocity: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.learning_rate = lr;
    }

    pub fn velocity(&self) -> &[Vec<T>] {
        &self.velocity
    }

    /// Applies one update from the accumulated gradients. `params` must be the
    /// list the optimizer was built with.
    pub fn step(&mut self, params: &[&Parameter<T>]) -> Result<()> {
        if params.len() != self.velocity.len() {
            return Err(Error::Usage(format!(
                "optimizer tracks {} parameters, got {}",
                self.velocity.len(),
                params.len()
            )));
        }
        let (lr, mu, wd) = (
            T::of(self.learning_rate),
            T::of(self.config.momentum),
            T::of(self.config.weight_decay),
        );
        for (p, v) in params.iter().zip(&mut self.velocity) {
            if p.numel() != v.len() {
                return Err(Error::Usage(format!("parameter `{}` changed size", p.name())));
            }
            let g = p.grad();
            let mut theta = p.values();
            for ((th, vi), gi) in theta.iter_mut().zip(v.iter_mut()).zip(g) {
                *vi = mu * *vi + gi + wd * *th;
                *th -= lr * *vi;
            }
            p.set_values(&theta);
        }
        Ok(())
    }
}

/// Step decay: the rate is divided by 10 at `⌊0.5·E⌋` and again at `⌊0.8·E⌋`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub total_epochs: usize,
}

impl LrSchedule {
    pub const DROP_POINTS: [f64; 2] = [0.5, 0.8];
    pub const DROP_FACTOR: f64 = 10.0;

    pub fn new(base_lr: f64, total_epochs: usize) -> Self {
        Self { base_lr, total_epochs }
    }

    pub fn drop_epochs(&self) -> [usize; 2] {
        Self::DROP_POINTS.map(|f| (f * self.total_epochs as f64).floor() as usize)
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let drops = self.drop_epochs().iter().filter(|&&d| epoch >= d).count();
        self.base_lr / Self::DROP_FACTOR.powi(drops as i32)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BucketTally {
    pub count: usize,
    /// Sum over examples of the fraction of heads predicted correctly.
    pub correct: f64,
    pub loss: f64,
}

impl BucketTally {
    pub fn accuracy(&self) -> Option<f64> {
        (self.count > 0).then(|| self.correct / self.count as f64)
    }

    pub fn mean_loss(&self) -> Option<f64> {
        (self.count > 0).then(|| self.loss / self.count as f64)
    }

    fn add(&mut self, correct: f64, loss: f64) {
        self.count += 1;
        self.correct += correct;
        self.loss += loss;
    }
}

/// Training accuracy and loss stratified by noise level. Buckets are
/// half-open `[e_i, e_{i+1})` except the last, which includes `1`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBucketMetrics {
    edges: Vec<f64>,
    epoch: Vec<BucketTally>,
    last_batch: Vec<BucketTally>,
}

impl Default for NoiseBucketMetrics {
    fn default() -> Self {
        Self::deciles()
    }
}

impl NoiseBucketMetrics {
    pub fn deciles() -> Self {
        let edges = (0..=NUM_BUCKETS).map(|i| i as f64 / NUM_BUCKETS as f64).collect();
        Self::new(edges).expect("deciles are valid edges")
    }

    pub fn new(edges: Vec<f64>) -> Result<Self> {
        let ok = edges.len() >= 2
            && edges[0] == 0.0
            && *edges.last().unwrap() == 1.0
            && edges.windows(2).all(|w| w[0] < w[1]);
        if !ok {
            return Err(Error::Config(format!("bucket edges must rise strictly from 0 to 1, got {edges:?}")));
        }
        let n = edges.len() - 1;
        Ok(Self {
            edges,
            epoch: vec![BucketTally::default(); n],
            last_batch: vec![BucketTally::default(); n],
        })
    }

    pub fn num_buckets(&self) -> usize {
        self.epoch.len()
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    /// `"0.0-0.1"` style label of bucket `b`.
    pub fn label(&self, b: usize) -> String {
        format!("{:.1}-{:.1}", self.edges[b], self.edges[b + 1])
    }

    pub fn bucket_of(&self, t: f64) -> usize {
        let last = self.num_buckets() - 1;
        self.edges[1..].iter().position(|&e| t < e).unwrap_or(last).min(last)
    }

    pub fn reset_epoch(&mut self) {
        self.epoch.fill(BucketTally::default());
        self.last_batch.fill(BucketTally::default());
    }

    pub fn begin_batch(&mut self) {
        self.last_batch.fill(BucketTally::default());
    }

    pub fn record(&mut self, t: f64, correct: f64, loss: f64) {
        let b = self.bucket_of(t);
        self.epoch[b].add(correct, loss);
        self.last_batch[b].add(correct, loss);
    }

    pub fn epoch(&self) -> &[BucketTally] {
        &self.epoch
    }

    pub fn last_batch(&self) -> &[BucketTally] {
        &self.last_batch
    }

    pub fn total_count(&self) -> usize {
        self.epoch.iter().map(|b| b.count).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    pub loss: f64,
    pub examples: usize,
    /// Mean over examples of the fraction of heads predicted correctly.
    pub accuracy: f64,
}

/// Class index of the largest entry; the first wins ties.
fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

/// The columns of `targets` (`[N × Σheads]`) that belong to head `h`.
fn head_block(targets: &[f64], heads: &[usize], h: usize) -> Vec<f64> {
    let width: usize = heads.iter().sum();
    let start: usize = heads[..h].iter().sum();
    targets
        .chunks(width)
        .flat_map(|row| row[start..start + heads[h]].iter().copied())
        .collect()
}

/// Sum over heads of the batch-mean cross-entropy against `y_clean`.
pub fn objective(logits: &[Tensor<f64>], y_clean: &[f64], heads: &[usize]) -> Result<Tensor<f64>> {
    let n = logits.first().map_or(0, |l| l.shape()[0]);
    let mut total: Option<Tensor<f64>> = None;
    for (h, l) in logits.iter().enumerate() {
        let target = Tensor::new(&[n, heads[h]], head_block(y_clean, heads, h))?;
        let ce = l.softmax_cross_entropy(&target)?;
        total = Some(match total {
            None => ce,
            Some(acc) => acc.add(&ce)?,
        });
    }
    total.ok_or_else(|| Error::Usage("model has no heads".into()))
}

/// Per-example `(fraction of heads correct, summed cross-entropy)`.
fn per_example(logits: &[Tensor<f64>], y_clean: &[f64], heads: &[usize]) -> Vec<(f64, f64)> {
    let n = logits.first().map_or(0, |l| l.shape()[0]);
    let mut out = vec![(0.0, 0.0); n];
    for (h, l) in logits.iter().enumerate() {
        let c = heads[h];
        let probs = softmax_rows(&l.data(), c);
        let target = head_block(y_clean, heads, h);
        for (i, o) in out.iter_mut().enumerate() {
            let (p, y) = (&probs[i * c..(i + 1) * c], &target[i * c..(i + 1) * c]);
            if argmax(p) == argmax(y) {
                o.0 += 1.0 / heads.len() as f64;
            }
            o.1 -= p.iter().zip(y).map(|(&p, &y)| if y > 0.0 { y * p.max(1e-300).ln() } else { 0.0 }).sum::<f64>();
        }
    }
    out
}

fn schedule_matches(mode: ModelMode, schedule: &NoiseSchedule) -> bool {
    match mode {
        ModelMode::Baseline => true,
        ModelMode::Cnt => schedule.mode() == NoiseMode::Cnt,
        ModelMode::OnlyNoise => schedule.mode() == NoiseMode::OnlyNoise,
    }
}

/// Draws `t` and `y(t)` per example for a batch of clean targets.
pub fn corrupt_batch(y_clean: &[f64], width: usize, schedule: &NoiseSchedule, rng: &mut Rng) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut ts = Vec::with_capacity(y_clean.len() / width.max(1));
    let mut noisy = Vec::with_capacity(y_clean.len());
    for row in y_clean.chunks(width) {
        let t = sample_time(rng, TimeSampling::Train);
        noisy.extend(schedule.corrupt(row, t, rng)?.y_noisy);
        ts.push(t);
    }
    Ok((ts, noisy))
}

/// One SGD step on `batch`. Conditioned models see `(x, y(t), t)` with a
/// fresh `t ~ U[0, 1]` per example; the loss always uses the clean targets.
/// Baseline models draw nothing from `noise_rng`.
pub fn train_step(
    model: &Model<f64>,
    batch: &Batch,
    schedule: &NoiseSchedule,
    opt: &mut Sgd<f64>,
    noise_rng: &mut Rng,
    dropout_rng: &mut Rng,
    buckets: Option<&mut NoiseBucketMetrics>,
) -> Result<StepMetrics> {
    let config = model.config();
    if !schedule_matches(config.mode, schedule) {
        return Err(Error::Usage(format!(
            "{} model cannot train with a {} noise schedule",
            config.mode,
            schedule.mode()
        )));
    }
    let n = batch.len;
    let width = config.target_width();
    let mut shape = vec![n];
    shape.extend(&config.input_shape);
    let x = Tensor::new(&shape, batch.inputs.clone())?;
    let cond = if config.mode.is_conditioned() {
        let (t, y_noisy) = corrupt_batch(&batch.targets, width, schedule, noise_rng)?;
        Some(Conditioning {
            y_noisy: Tensor::new(&[n, width], y_noisy)?,
            t,
        })
    } else {
        None
    };

    let out = model.forward(&x, cond.as_ref(), Phase::Train(dropout_rng))?;
    let loss = objective(&out.logits, &batch.targets, &config.heads)?;
    let value = loss.item();
    if !value.is_finite() {
        return Err(Error::Diverged(diagnostic(model, value, opt.learning_rate())));
    }
    let params = model.parameters();
    model.zero_grad();
    loss.backward()?;
    opt.step(&params)?;

    let stats = per_example(&out.logits, &batch.targets, &config.heads);
    if let (Some(b), Some(c)) = (buckets, &cond) {
        b.begin_batch();
        for (&t, &(correct, l)) in c.t.iter().zip(&stats) {
            b.record(t, correct, l);
        }
    }
    Ok(StepMetrics {
        loss: value,
        examples: n,
        accuracy: stats.iter().map(|s| s.0).sum::<f64>() / n.max(1) as f64,
    })
}

fn diagnostic(model: &Model<f64>, loss: f64, lr: f64) -> String {
    let norms: Vec<String> = model
        .parameters()
        .iter()
        .map(|p| {
            let v = p.values();
            format!("{}={:.3e}", p.name(), v.iter().map(|x| x * x).sum::<f64>().sqrt())
        })
        .collect();
    format!("loss = {loss} at lr = {lr}; parameter norms: {}", norms.join(", "))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub per_head: Vec<f64>,
    /// Mean of the per-head accuracies.
    pub overall: f64,
    /// Predicted class per example, per head.
    pub predictions: Vec<Vec<usize>>,
}

/// Accuracy of `predict` (one pure-noise draw at `t = 1` per example).
pub fn evaluate(model: &Model<f64>, data: &Dataset, rng: &mut Rng, batch_size: usize) -> Result<EvalResult> {
    let heads = &model.config().heads;
    let mut correct = vec![0usize; heads.len()];
    let mut predictions = Vec::with_capacity(data.len());
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let b = data.batch(chunk);
        let mut shape = vec![b.len];
        shape.extend(&data.input_shape);
        let out = model.predict(&Tensor::new(&shape, b.inputs)?, rng)?;
        let am = out.argmax();
        for (k, &i) in chunk.iter().enumerate() {
            let pred: Vec<usize> = am.iter().map(|head| head[k]).collect();
            for (h, &p) in pred.iter().enumerate() {
                correct[h] += (p == data.labels[i][h]) as usize;
            }
            predictions.push(pred);
        }
    }
    let per_head: Vec<f64> = correct.iter().map(|&c| c as f64 / data.len().max(1) as f64).collect();
    let overall = per_head.iter().sum::<f64>() / per_head.len().max(1) as f64;
    Ok(EvalResult {
        per_head,
        overall,
        predictions,
    })
}
