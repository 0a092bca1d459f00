//! `cntlab`: train, evaluate, sweep and plot noisy-target conditioning runs.

use clap::{Args, Parser, Subcommand};
use cntlab::config::{parse_config, ExperimentConfig, OUTPUT_ROOT_ENV};
use cntlab::experiment::{load_data, read_summary, run_experiment_with, sweep_configs, sweep_table, CONFIG_FILE};
use cntlab::report::{read_metrics, write_atomic, write_plots};
use cntlab::rng::{stream, Stream};
use cntlab::training::evaluate;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode, Stdio};

#[derive(Parser)]
#[command(name = "cntlab", version, about = "Conditioning networks on noisy targets: a desk-scale lab")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train one model and write its metrics, checkpoint and summary.
    Train {
        #[command(flatten)]
        settings: Settings,
        /// Suppress per-epoch progress on stderr.
        #[arg(long)]
        quiet: bool,
    },
    /// Evaluate a checkpoint on the configured task's test split.
    Eval {
        /// Run directory holding checkpoint.bin and checkpoint.json.
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        settings: Settings,
    },
    /// Train baseline, only-noise and cnt for several seeds and tabulate.
    Sweep {
        /// Seeds per mode, counting up from the configured seed.
        #[arg(long, default_value_t = 3)]
        seeds: usize,
        /// Run the seeds of each mode as parallel child processes.
        #[arg(long)]
        parallel: bool,
        #[command(flatten)]
        settings: Settings,
    },
    /// Render SVG curves from a metrics CSV.
    Plot {
        #[arg(long)]
        metrics: PathBuf,
        /// Output directory; defaults to the CSV's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Settings {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides as `--key value` or `--key=value`, after the named options.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "OVERRIDES")]
    overrides: Vec<String>,
}

impl Settings {
    fn resolve(&self, fallback_file: Option<&Path>) -> Result<ExperimentConfig, String> {
        let file = self.config.as_deref().or(fallback_file);
        let root = std::env::var(OUTPUT_ROOT_ENV).ok();
        parse_config(file, &self.overrides, root.as_deref()).map_err(|e| e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Cmd::Train { settings, quiet } => train(&settings, quiet),
        Cmd::Eval { checkpoint, settings } => eval(&checkpoint, &settings),
        Cmd::Sweep {
            seeds,
            parallel,
            settings,
        } => sweep(&settings, seeds, parallel),
        Cmd::Plot { metrics, out } => plot(&metrics, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn train(settings: &Settings, quiet: bool) -> Result<(), String> {
    let cfg = settings.resolve(None)?;
    let run = run_experiment_with(&cfg, |epoch, rows| {
        if quiet {
            return;
        }
        let value = |split: &str, metric: &str| {
            rows.iter()
                .find(|r| r.split == split && r.head == "all" && r.metric == metric && r.bucket.is_empty())
                .map_or(f64::NAN, |r| r.value)
        };
        eprintln!(
            "epoch {:>4}  loss {:.4}  train acc {:.4}  test acc {:.4}",
            epoch + 1,
            value("train", "loss"),
            value("train", "accuracy"),
            value("test", "accuracy")
        );
    })
    .map_err(|e| e.to_string())?;
    println!("run {}", run.dir.display());
    println!("test accuracy {:.4}", run.summary.test_accuracy_mean);
    Ok(())
}

fn eval(checkpoint: &Path, settings: &Settings) -> Result<(), String> {
    let echoed = checkpoint.join(CONFIG_FILE);
    let cfg = settings.resolve(echoed.is_file().then_some(echoed.as_path()))?;
    let model = cntlab::checkpoint::load(checkpoint).map_err(|e| e.to_string())?;
    let (_, test) = load_data(&cfg).map_err(|e| e.to_string())?;
    let result = evaluate(&model, &test, &mut stream(cfg.seed, Stream::Eval), cfg.batch_size).map_err(|e| e.to_string())?;
    for (h, a) in result.per_head.iter().enumerate() {
        println!("head {h} accuracy {a:.4}");
    }
    println!("accuracy {:.4}", result.overall);
    Ok(())
}

fn sweep(settings: &Settings, seeds: usize, parallel: bool) -> Result<(), String> {
    if seeds == 0 {
        return Err("--seeds must be at least 1".into());
    }
    let cfg = settings.resolve(None)?;
    let runs = sweep_configs(&cfg, seeds);
    if parallel {
        let spec = cfg.output_dir.join(format!("{}-sweep.cfg", cfg.task));
        write_atomic(&spec, cfg.to_file_string().as_bytes()).map_err(|e| e.to_string())?;
        let exe = std::env::current_exe().map_err(|e| format!("cannot locate own executable: {e}"))?;
        for group in runs.chunks(seeds) {
            let children = group
                .iter()
                .map(|c| {
                    eprintln!("start {}", c.run_name());
                    Command::new(&exe)
                        .args(["train", "--quiet", "--config"])
                        .arg(&spec)
                        .args(["--mode", &c.mode.to_string(), "--seed", &c.seed.to_string()])
                        .stdout(Stdio::null())
                        .spawn()
                        .map(|child| (c.run_name(), child))
                        .map_err(|e| format!("cannot start {}: {e}", c.run_name()))
                })
                .collect::<Result<Vec<_>, _>>()?;
            let mut failed = Vec::new();
            for (name, mut child) in children {
                match child.wait() {
                    Ok(status) if status.success() => eprintln!("done {name}"),
                    _ => failed.push(name),
                }
            }
            if !failed.is_empty() {
                return Err(format!("runs failed: {}", failed.join(", ")));
            }
        }
    } else {
        for c in &runs {
            eprintln!("run {}", c.run_name());
            run_experiment_with(c, |_, _| {}).map_err(|e| format!("{}: {e}", c.run_name()))?;
        }
    }
    let summaries = runs
        .iter()
        .map(|c| read_summary(&c.run_dir()).map_err(|e| e.to_string()))
        .collect::<Result<Vec<_>, _>>()?;
    let table = sweep_table(&summaries);
    let path = cfg.output_dir.join(format!("{}-sweep.md", cfg.task));
    write_atomic(&path, table.as_bytes()).map_err(|e| e.to_string())?;
    print!("{table}");
    eprintln!("table {}", path.display());
    Ok(())
}

fn plot(metrics: &Path, out: Option<&Path>) -> Result<(), String> {
    let rows = read_metrics(metrics).map_err(|e| e.to_string())?;
    let dir = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| metrics.parent().map(Path::to_path_buf).unwrap_or_default());
    for path in write_plots(&rows, &dir).map_err(|e| e.to_string())? {
        println!("{}", path.display());
    }
    Ok(())
}
