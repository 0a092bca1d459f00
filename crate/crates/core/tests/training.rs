//! The training step, evaluation and complete runs.

use cntlab::config::{ExperimentConfig, TaskKind};
use cntlab::experiment::{load_data, run_experiment, METRICS_FILE};
use cntlab::models::{Conditioning, Model, ModelMode, Phase};
use cntlab::nn::Module;
use cntlab::report::read_metrics;
use cntlab::rng::{stream, Stream};
use cntlab::training::{corrupt_batch, evaluate, objective, train_step, LrSchedule, Sgd};
use cntlab::{Error, Tensor};
use rand::Rng;
use std::path::Path;

fn quick(mode: ModelMode, out: &Path) -> ExperimentConfig {
    let mut c = ExperimentConfig::for_task(TaskKind::Blobs);
    c.mode = mode;
    c.epochs = 4;
    c.train_size = 256;
    c.test_size = 200;
    c.blobs.train_size = 256;
    c.blobs.test_size = 200;
    c.output_dir = out.to_path_buf();
    c
}

fn model_for(cfg: &ExperimentConfig) -> Model<f64> {
    Model::new(cfg.model_config(), &mut stream(cfg.seed, Stream::Init)).unwrap()
}

#[test]
fn baseline_step_draws_no_noise() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick(ModelMode::Baseline, dir.path());
    let (train, _) = load_data(&cfg).unwrap();
    let model = model_for(&cfg);
    let mut opt = Sgd::new(cfg.optim, &model.parameters());
    let mut noise = stream(1, Stream::Noise);
    let untouched = stream(1, Stream::Noise).random::<u64>();
    let batch = train.batch(&(0..32).collect::<Vec<_>>());
    train_step(&model, &batch, &cfg.noise_schedule().unwrap(), &mut opt, &mut noise, &mut stream(1, Stream::Dropout), None).unwrap();
    assert_eq!(noise.random::<u64>(), untouched);
}

#[test]
fn loss_is_taken_against_clean_targets() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick(ModelMode::Cnt, dir.path());
    let schedule = cfg.noise_schedule().unwrap();
    let (train, _) = load_data(&cfg).unwrap();
    let batch = train.batch(&(10..42).collect::<Vec<_>>());
    let width = train.target_width();

    // Replay the step's draws on an identical model.
    let twin = model_for(&cfg);
    let (t, y_noisy) = corrupt_batch(&batch.targets, width, &schedule, &mut stream(2, Stream::Noise)).unwrap();
    assert_ne!(y_noisy, batch.targets);
    let cond = Conditioning {
        y_noisy: Tensor::new(&[batch.len, width], y_noisy).unwrap(),
        t,
    };
    let x = Tensor::new(&[batch.len, train.input_len()], batch.inputs.clone()).unwrap();
    let out = twin.forward(&x, Some(&cond), Phase::Train(&mut stream(2, Stream::Dropout))).unwrap();
    let expected = objective(&out.logits, &batch.targets, &train.heads).unwrap().item();

    let model = model_for(&cfg);
    let mut opt = Sgd::new(cfg.optim, &model.parameters());
    let m = train_step(
        &model,
        &batch,
        &schedule,
        &mut opt,
        &mut stream(2, Stream::Noise),
        &mut stream(2, Stream::Dropout),
        None,
    )
    .unwrap();
    assert_eq!(m.loss, expected);
    assert_eq!(m.examples, 32);
}

#[test]
fn mismatched_schedule_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cnt = quick(ModelMode::Cnt, dir.path());
    let only = quick(ModelMode::OnlyNoise, dir.path());
    let (train, _) = load_data(&cnt).unwrap();
    let model = model_for(&cnt);
    let mut opt = Sgd::new(cnt.optim, &model.parameters());
    let r = train_step(
        &model,
        &train.batch(&[0, 1]),
        &only.noise_schedule().unwrap(),
        &mut opt,
        &mut stream(0, Stream::Noise),
        &mut stream(0, Stream::Dropout),
        None,
    );
    assert!(matches!(r, Err(Error::Usage(_))));
}

#[test]
fn runaway_learning_rate_reports_divergence() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quick(ModelMode::Baseline, dir.path());
    cfg.optim.learning_rate = 1e12;
    cfg.epochs = 20;
    match run_experiment(&cfg) {
        Err(Error::Diverged(msg)) => assert!(msg.contains("parameter norms")),
        other => panic!("expected divergence, got {:?}", other.map(|r| r.summary)),
    }
}

#[test]
fn fresh_cnt_evaluates_like_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let base_cfg = quick(ModelMode::Baseline, dir.path());
    let (_, test) = load_data(&base_cfg).unwrap();
    let base = model_for(&base_cfg);
    let cnt = model_for(&quick(ModelMode::Cnt, dir.path()));
    let a = evaluate(&base, &test, &mut stream(0, Stream::Eval), 64).unwrap();
    let b = evaluate(&cnt, &test, &mut stream(0, Stream::Eval), 64).unwrap();
    assert_eq!(a.overall, b.overall);
    assert_eq!(a.predictions, b.predictions);
}

#[test]
fn runs_are_byte_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = run_experiment(&quick(ModelMode::Cnt, a.path())).unwrap();
    let rb = run_experiment(&quick(ModelMode::Cnt, b.path())).unwrap();
    let csv_a = std::fs::read(ra.dir.join(METRICS_FILE)).unwrap();
    assert_eq!(csv_a, std::fs::read(rb.dir.join(METRICS_FILE)).unwrap());

    let mut other = quick(ModelMode::Cnt, b.path());
    other.seed = 1;
    let rc = run_experiment(&other).unwrap();
    assert_ne!(csv_a, std::fs::read(rc.dir.join(METRICS_FILE)).unwrap());

    let e1 = evaluate(&ra.model, &ra.test, &mut stream(9, Stream::Eval), 128).unwrap();
    let e2 = evaluate(&ra.model, &ra.test, &mut stream(9, Stream::Eval), 128).unwrap();
    assert_eq!(e1, e2);
}

#[test]
fn metrics_cover_schedule_buckets_and_heads() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quick(ModelMode::Cnt, dir.path());
    cfg.epochs = 10;
    let run = run_experiment(&cfg).unwrap();
    let rows = read_metrics(&run.dir.join(METRICS_FILE)).unwrap();
    assert_eq!(rows, run.rows);

    let schedule = LrSchedule::new(cfg.optim.learning_rate, cfg.epochs);
    for r in rows.iter().filter(|r| r.metric == "lr") {
        assert!((r.value - schedule.lr_at(r.epoch)).abs() < 1e-15);
    }
    let lr: Vec<f64> = rows.iter().filter(|r| r.metric == "lr").map(|r| r.value).collect();
    assert_eq!(lr.len(), 10);
    assert!(lr[4] > lr[5] && lr[7] > lr[8]);

    for epoch in 0..cfg.epochs {
        let counts: f64 = rows
            .iter()
            .filter(|r| r.epoch == epoch && r.metric == "bucket_count")
            .map(|r| r.value)
            .sum();
        assert_eq!(counts as usize, cfg.train_size);
        let buckets = rows.iter().filter(|r| r.epoch == epoch && r.metric == "bucket_count").count();
        assert_eq!(buckets, 10);
        assert!(rows.iter().any(|r| r.epoch == epoch && r.split == "test" && r.head == "0"));
    }
    assert!(run.summary.test_accuracy_mean > 1.5 / cfg.blobs.num_classes as f64);
}

#[test]
fn baseline_runs_log_no_buckets() {
    let dir = tempfile::tempdir().unwrap();
    let run = run_experiment(&quick(ModelMode::Baseline, dir.path())).unwrap();
    assert!(run.rows.iter().all(|r| r.bucket.is_empty()));
}
