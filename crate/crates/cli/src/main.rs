use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand};

use snn_mia::config::ExperimentConfig;
use snn_mia::pipeline::{report_from_scores, run_experiment, run_sweep, Report, SweepAxis};

/// Membership-inference audits of spiking and conventional classifiers.
#[derive(Parser, Debug)]
#[command(name = "snn-mia", version)]
struct Cli {
    /// Worker threads for training and scoring (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train target and reference models, attack, and write the report.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Repeat the run along one axis and collect the results in sweep.csv.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// `latency` (one row group per configured T) or `dropout` (off/on).
        #[arg(long)]
        axis: SweepAxis,
    },
    /// Recompute report.json, ROC and histogram files from a scores.csv.
    Report {
        scores: PathBuf,
        /// Output directory (default: next to the scores file).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        bins: usize,
    },
}

#[derive(clap::Args, Debug)]
struct Common {
    #[arg(long, short)]
    config: PathBuf,
    /// Override `master_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Override `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)
            .map_err(|e| anyhow!("config stage failed: {e}"))?;
        if let Some(seed) = self.seed {
            cfg.master_seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        Ok(cfg)
    }
}

fn print_report(report: &Report) {
    println!("config_hash={} master_seed={}", report.config_hash, report.master_seed);
    println!("{:<5} {:>4} {:>12} {:<14} {:>8} {:>10} {:>10}", "pool", "T", "dropout", "attack", "auc", "tpr@0.1%", "tpr@1%");
    for s in &report.settings {
        let t = s.latency.map_or("-".to_string(), |t| t.to_string());
        let dropout = match (s.dropout_p, s.dropout_n) {
            (Some(p), Some(n)) => format!("p={p},N={n}"),
            _ => "off".to_string(),
        };
        for (attack, r) in &s.attacks {
            println!(
                "{:<5} {:>4} {:>12} {:<14} {:>8.4} {:>10.4} {:>10.4}",
                s.pool_kind.as_str(),
                t,
                dropout,
                attack.column(),
                r.auc,
                r.tpr_at_01pct_fpr,
                r.tpr_at_1pct_fpr
            );
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(workers) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build_global()
            .context("could not start the worker pool")?;
    }
    match cli.command {
        Command::Run { common } => {
            let cfg = common.load()?;
            let summary = run_experiment(&cfg)?;
            for m in &summary.models {
                println!("{:<14} train_acc {:.4} test_acc {:.4}", m.name, m.train_accuracy, m.test_accuracy);
            }
            print_report(&summary.report);
            println!("wrote {}", summary.output_dir.display());
        }
        Command::Sweep { common, axis } => {
            let cfg = common.load()?;
            let rows = run_sweep(&cfg, axis)?;
            println!("{:<8} {:<14} {:>8} {:>10} {:>10}", "value", "attack", "auc", "tpr@0.1%", "tpr@1%");
            for r in &rows {
                println!(
                    "{:<8} {:<14} {:>8.4} {:>10.4} {:>10.4}",
                    r.axis_value,
                    r.attack.column(),
                    r.report.auc,
                    r.report.tpr_at_01pct_fpr,
                    r.report.tpr_at_1pct_fpr
                );
            }
            println!("wrote {}", cfg.output_dir.join("sweep.csv").display());
        }
        Command::Report { scores, out, bins } => {
            let dir = out.unwrap_or_else(|| scores.parent().map_or_else(|| Path::new(".").to_path_buf(), Path::to_path_buf));
            let report = report_from_scores(&scores, Some(&dir), bins)?;
            print_report(&report);
            println!("wrote {}", dir.join("report.json").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // Stage errors already embed their source message.
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
