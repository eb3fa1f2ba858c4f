//! `etad-lab`: data generation, training, ablations, memory benchmarks and
//! evaluation on top of `etad-core`.
//!
//! Outputs land under `--out` (default: the config's `out_dir`):
//!
//! | command      | files                                  |
//! |--------------|----------------------------------------|
//! | `gen-data`   | `index.json`, `videos/*.bin`            |
//! | `train`      | `checkpoint.json`, `metrics.csv`        |
//! | `ablate-aps` | `ablate_aps.csv`                        |
//! | `ablate-sgs` | `ablate_sgs.csv`                        |
//! | `bench-mem`  | `bench_mem.csv`                         |
//! | `eval`       | `eval.json`                             |
//!
//! Every CSV and JSON output is a pure function of config and seed, except
//! the `wall_seconds` and `time_ratio` columns. Commands other than
//! `gen-data` generate the dataset into `--data` if it is missing.

mod commands;
mod report;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{
    ablate_aps, ablate_sgs, bench_mem, load_config, oracle_detections, run, train_logged, ApsRow, MemRow, SgsRow,
    CHECKPOINT_FILE, METRICS_FILE,
};
pub use report::{metrics_csv, strip_wall_seconds, write_csv};

#[derive(Debug, Parser)]
#[command(name = "etad-lab", version, about = "Sequentialized gradient sampling and proposal sampling experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic dataset.
    GenData(Common),
    /// Train and write a checkpoint plus per-epoch metrics.
    Train(Common),
    /// Frozen-encoder runs over proposal sampling ratios.
    AblateAps {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_values_t = [0.001, 0.002, 0.02, 0.06, 0.2, 1.0])]
        ratios: Vec<f64>,
    },
    /// Runs over gradient sampling ratios against the parallel baseline.
    AblateSgs {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_values_t = [1.0, 0.5, 0.4, 0.3, 0.2, 0.1])]
        gammas: Vec<f64>,
    },
    /// Encoder activation peak per micro-batch size against the parallel baseline.
    BenchMem {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 4, 8, 16, 32, 64, 128])]
        ks: Vec<usize>,
    },
    /// Evaluate a checkpoint on a dataset split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "val")]
        split: String,
    },
}

/// Flags shared by every subcommand; each overrides the matching config field.
#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// JSON run configuration; missing fields take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run seed; the dataset seed lives in the config.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long = "aps-ratio")]
    pub aps_ratio: Option<f64>,
    /// Proposal sampling strategy.
    #[arg(long)]
    pub sampler: Option<String>,
    /// Snippet-gradient sampling strategy.
    #[arg(long = "snippet-sampler")]
    pub snippet_sampler: Option<String>,
    #[arg(long = "micro-batch")]
    pub micro_batch: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Train with one parallel forward and backward per video.
    #[arg(long = "naive-e2e")]
    pub naive_e2e: bool,
    /// Evaluate ground-truth segments as detections with score 1.
    #[arg(long)]
    pub oracle: bool,
    /// Overwrite existing outputs.
    #[arg(long)]
    pub force: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Dataset directory (default: `<out>/data`).
    #[arg(long)]
    pub data: Option<PathBuf>,
}

/// Exit status classes: validation failures exit 2, everything else 1.
#[derive(Debug)]
pub enum Failure {
    Validation(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast::<etad_core::Error>() {
            Ok(etad_core::Error::Config(errors)) => Failure::Validation(etad_core::Error::Config(errors).to_string()),
            Ok(other) => Failure::Runtime(other.into()),
            Err(e) => Failure::Runtime(e),
        }
    }
}

impl From<etad_core::Error> for Failure {
    fn from(e: etad_core::Error) -> Self {
        Failure::from(anyhow::Error::from(e))
    }
}
