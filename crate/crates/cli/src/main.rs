//! `tsnet`: preprocessing, splitting, triplet sampling, training, evaluation,
//! prediction and cross-validation from the command line.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 invalid configuration or
//! usage, 3 finished but skipped some inputs. Log verbosity comes from
//! `TSNET_LOG` (e.g. `TSNET_LOG=info`).

mod commands;
mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::{ConfigError, RunConfig};

#[derive(Parser)]
#[command(name = "tsnet", version, about = "Triplet few-shot toolkit")]
struct Cli {
    /// Run configuration (TOML, or JSON by extension).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run seed; overrides the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Apply the preprocessing pipeline to every PNG in a directory.
    Preprocess {
        #[arg(long)]
        input: PathBuf,
    },
    /// Patient-aware train/test split, optionally also k folds.
    Split {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        test_fraction: Option<f64>,
        #[arg(long)]
        folds: Option<usize>,
    },
    /// Sample triplets from a manifest.
    Triplets {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        same_patient_positive: bool,
    },
    /// Train the ensemble on triplets.
    Train {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Metrics from a trained model, or from an existing predictions CSV.
    Evaluate {
        /// Score this predictions CSV instead of running a model.
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// Comma-separated class order for `--predictions`.
        #[arg(long, value_delimiter = ',')]
        classes: Option<Vec<String>>,
        #[arg(long, value_enum, default_value_t = Format::Both)]
        format: Format,
    },
    /// Classify query images or manifest records against the support set.
    Predict {
        /// Labelled queries.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Unlabelled query images; the file stem becomes the sample id.
        #[arg(long = "image")]
        images: Vec<PathBuf>,
    },
    /// k-fold cross-validation.
    Crossval {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        folds: Option<usize>,
    },
    /// Print parameter counts of the configured architecture.
    Params,
    /// Check an embedding file against its sidecar.
    VerifyEmb { file: PathBuf },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Both,
}

/// Successful completion, possibly with skipped inputs.
pub enum Outcome {
    Done,
    Partial(usize),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TSNET_LOG", "warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::Partial(n)) => {
            eprintln!("completed with {n} skipped input(s)");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn execute(cli: Cli) -> anyhow::Result<Outcome> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.paths.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("tsnet-out"));
    commands::dispatch(cli.command, cfg, out)
}
