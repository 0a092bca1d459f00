//! One complete run: data, model, training loop, per-epoch metrics and the
//! files left behind.

use crate::checkpoint;
use crate::config::{ExperimentConfig, TaskKind};
use crate::error::{Error, Result};
use crate::models::{Model, ModelMode, ParameterCounts};
use crate::nn::Module;
use crate::report::{comparison_table, write_atomic, write_metrics, MetricRow};
use crate::rng::{stream, Stream};
use crate::tasks::{gen_blobs, gen_shapes, mixup, Dataset};
use crate::training::{evaluate, train_step, EvalResult, LrSchedule, NoiseBucketMetrics, Sgd};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CONFIG_FILE: &str = "config.cfg";

/// `(train, test)` for the configured task; a pure function of the config
/// and seed.
pub fn load_data(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    match cfg.task {
        TaskKind::Blobs => {
            let task = gen_blobs(&cfg.blob_config(), cfg.seed)?;
            Ok((task.train, task.test))
        }
        TaskKind::Shapes => gen_shapes(cfg.train_size, cfg.test_size, cfg.seed),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub task: String,
    pub mode: String,
    pub seed: u64,
    pub epochs: usize,
    pub test_accuracy: Vec<f64>,
    pub test_accuracy_mean: f64,
    pub final_train_loss: f64,
    pub parameters: ParameterCounts,
    pub wall_time_seconds: f64,
    pub config: BTreeMap<String, String>,
}

pub struct RunArtifacts {
    pub dir: PathBuf,
    pub rows: Vec<MetricRow>,
    pub summary: Summary,
    pub final_eval: EvalResult,
    pub model: Model<f64>,
    pub train: Dataset,
    pub test: Dataset,
}

/// Trains per `cfg` and writes the metrics CSV, the checkpoint, the summary
/// and a config echo into [`ExperimentConfig::run_dir`].
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunArtifacts> {
    run_experiment_with(cfg, |_, _| {})
}

/// As [`run_experiment`], calling `progress(epoch, rows)` after every epoch
/// with that epoch's rows.
pub fn run_experiment_with(cfg: &ExperimentConfig, mut progress: impl FnMut(usize, &[MetricRow])) -> Result<RunArtifacts> {
    cfg.validate()?;
    let started = Instant::now();
    let schedule = cfg.noise_schedule()?;
    let (train, test) = load_data(cfg)?;
    let model = Model::<f64>::new(cfg.model_config(), &mut stream(cfg.seed, Stream::Init))?;
    let params = model.parameters();
    let mut opt = Sgd::new(cfg.optim, &params);
    let lr = LrSchedule::new(cfg.optim.learning_rate, cfg.epochs);

    let mut shuffle_rng = stream(cfg.seed, Stream::Shuffle);
    let mut noise_rng = stream(cfg.seed, Stream::Noise);
    let mut dropout_rng = stream(cfg.seed, Stream::Dropout);
    let mut mixup_rng = stream(cfg.seed, Stream::Mixup);
    let mut eval_rng = stream(cfg.seed, Stream::Eval);
    let conditioned = cfg.mode.is_conditioned();
    let mut bucket_metrics = NoiseBucketMetrics::deciles();

    let mut rows = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut last_loss = f64::NAN;
    let mut last_eval = None;
    for epoch in 0..cfg.epochs {
        let epoch_start = rows.len();
        opt.set_learning_rate(lr.lr_at(epoch));
        order.shuffle(&mut shuffle_rng);
        bucket_metrics.reset_epoch();
        let (mut loss_sum, mut acc_sum, mut seen) = (0.0, 0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let mut batch = train.batch(chunk);
            if cfg.mixup {
                let mut partner: Vec<usize> = chunk.to_vec();
                partner.shuffle(&mut mixup_rng);
                batch = mixup(&batch, &train.batch(&partner), cfg.mixup_alpha, &mut mixup_rng)?.0;
            }
            let buckets = conditioned.then_some(&mut bucket_metrics);
            let m = train_step(&model, &batch, &schedule, &mut opt, &mut noise_rng, &mut dropout_rng, buckets)?;
            loss_sum += m.loss * m.examples as f64;
            acc_sum += m.accuracy * m.examples as f64;
            seen += m.examples;
        }
        last_loss = loss_sum / seen as f64;
        rows.push(MetricRow::new(epoch, "train", "all", "loss", last_loss));
        rows.push(MetricRow::new(epoch, "train", "all", "accuracy", acc_sum / seen as f64));
        rows.push(MetricRow::new(epoch, "train", "all", "lr", opt.learning_rate()));
        if conditioned {
            for b in 0..bucket_metrics.num_buckets() {
                let label = bucket_metrics.label(b);
                let tally = bucket_metrics.epoch()[b];
                rows.push(MetricRow::new(epoch, "train", "all", "bucket_count", tally.count as f64).bucketed(&label));
                if let (Some(a), Some(l)) = (tally.accuracy(), tally.mean_loss()) {
                    rows.push(MetricRow::new(epoch, "train", "all", "bucket_accuracy", a).bucketed(&label));
                    rows.push(MetricRow::new(epoch, "train", "all", "bucket_loss", l).bucketed(&label));
                }
                if let Some(a) = bucket_metrics.last_batch()[b].accuracy() {
                    rows.push(MetricRow::new(epoch, "train", "all", "last_batch_accuracy", a).bucketed(&label));
                }
            }
        }
        let eval = evaluate(&model, &test, &mut eval_rng, cfg.batch_size)?;
        for (h, a) in eval.per_head.iter().enumerate() {
            rows.push(MetricRow::new(epoch, "test", &h.to_string(), "accuracy", *a));
        }
        rows.push(MetricRow::new(epoch, "test", "all", "accuracy", eval.overall));
        last_eval = Some(eval);
        progress(epoch, &rows[epoch_start..]);
    }
    let final_eval = last_eval.expect("at least one epoch");

    let dir = cfg.run_dir();
    write_metrics(&dir.join(METRICS_FILE), &rows)?;
    checkpoint::save(&dir, &model)?;
    write_atomic(&dir.join(CONFIG_FILE), cfg.to_file_string().as_bytes())?;
    let summary = Summary {
        task: cfg.task.to_string(),
        mode: cfg.mode.to_string(),
        seed: cfg.seed,
        epochs: cfg.epochs,
        test_accuracy: final_eval.per_head.clone(),
        test_accuracy_mean: final_eval.overall,
        final_train_loss: last_loss,
        parameters: model.parameter_counts(),
        wall_time_seconds: started.elapsed().as_secs_f64(),
        config: cfg.echo().into_iter().collect(),
    };
    let mut json = serde_json::to_vec_pretty(&summary)?;
    json.push(b'\n');
    write_atomic(&dir.join(SUMMARY_FILE), &json)?;
    drop(params);
    Ok(RunArtifacts {
        dir,
        rows,
        summary,
        final_eval,
        model,
        train,
        test,
    })
}

/// First epoch whose `bucket_accuracy` in `bucket` reaches `threshold`.
pub fn first_epoch_reaching(rows: &[MetricRow], bucket: &str, threshold: f64) -> Option<usize> {
    rows.iter()
        .filter(|r| r.metric == "bucket_accuracy" && r.bucket == bucket)
        .find(|r| r.value >= threshold)
        .map(|r| r.epoch)
}

/// One config per (mode, seed): every mode of [`ModelMode::ALL`] for seeds
/// `cfg.seed .. cfg.seed + seeds`.
pub fn sweep_configs(cfg: &ExperimentConfig, seeds: usize) -> Vec<ExperimentConfig> {
    let mut out = Vec::with_capacity(ModelMode::ALL.len() * seeds);
    for mode in ModelMode::ALL {
        for s in 0..seeds as u64 {
            let mut c = cfg.clone();
            c.mode = mode;
            c.seed = cfg.seed + s;
            out.push(c);
        }
    }
    out
}

/// Reads a finished run's summary.
pub fn read_summary(run_dir: &Path) -> Result<Summary> {
    let path = run_dir.join(SUMMARY_FILE);
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// Mean test accuracy as "mean (std)" over seeds, one column per mode and
/// one row per task in order of first appearance.
pub fn sweep_table(summaries: &[Summary]) -> String {
    let columns: Vec<String> = ModelMode::ALL.iter().map(|m| m.to_string()).collect();
    let column_refs: Vec<&str> = columns.iter().map(String::as_str).collect();
    let mut tasks: Vec<&str> = Vec::new();
    for s in summaries {
        if !tasks.contains(&s.task.as_str()) {
            tasks.push(&s.task);
        }
    }
    let rows: Vec<(String, Vec<Vec<f64>>)> = tasks
        .iter()
        .map(|&task| {
            let cells = columns
                .iter()
                .map(|mode| {
                    summaries
                        .iter()
                        .filter(|s| s.task == task && &s.mode == mode)
                        .map(|s| s.test_accuracy_mean)
                        .collect()
                })
                .collect();
            (task.to_string(), cells)
        })
        .collect();
    comparison_table(&column_refs, &rows)
}
