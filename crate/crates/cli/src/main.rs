//! pulsegate: sepsis risk from hourly heart rate.
//!
//! One binary drives the whole pipeline: synthesize or ingest a cohort,
//! window and split it, train or search model architectures, transfer a
//! 1-hour model to the 4-hour task, and evaluate or profile any model file.
//! Exit codes: 0 ok, 2 config, 3 data/io, 4 numeric failure, 5 search
//! failure, 6 horizon mismatch.

mod commands;
mod config;
mod error;
mod manifest;
mod psv;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::{Overrides, RunConfig};
use crate::error::CliError;

#[derive(Parser)]
#[command(
    name = "pulsegate",
    version,
    about = "Sepsis-onset risk from hourly heart rate: preprocess, train, search, transfer, evaluate, profile"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Plain-text config file of key = value lines; flags override it.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Global seed; every stage derives its own substream from it.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Output directory for artifacts and manifest.json.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Prediction horizon in hours (1 or 4).
    #[arg(long, value_name = "H")]
    horizon: Option<u8>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        RunConfig::resolve(&Overrides {
            config: self.config.clone(),
            seed: self.seed,
            out: self.out.clone(),
            horizon: self.horizon,
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort as one PSV file per patient.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Ingest, window, split, and balance a cohort into train/val/test CSVs.
    Preprocess {
        #[command(flatten)]
        common: Common,
    },
    /// Train the configured family and report metrics on the test split.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Search architectures with the genetic algorithm.
    Optimize {
        #[command(flatten)]
        common: Common,
        /// Score candidates by distance to a fixed target architecture
        /// instead of training them; completes in seconds.
        #[arg(long)]
        surrogate: bool,
    },
    /// Fine-tune a 1-hour model onto a 4-hour dataset.
    Transfer {
        #[command(flatten)]
        common: Common,
        /// Trained 1-hour model file.
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
        /// 4-hour dataset CSV to fine-tune on.
        #[arg(long, value_name = "FILE")]
        dataset: PathBuf,
        /// Dataset CSV to evaluate on; defaults to the fine-tune dataset.
        #[arg(long, value_name = "FILE")]
        eval_dataset: Option<PathBuf>,
        /// Fine-tune epochs; defaults to the family schedule.
        #[arg(long, value_name = "N")]
        epochs: Option<usize>,
    },
    /// Score a model file against a dataset CSV.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Trained model file.
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
        /// Dataset CSV with the model's horizon.
        #[arg(long, value_name = "FILE")]
        dataset: PathBuf,
    },
    /// Measure prediction latency and artifact size.
    Profile {
        #[command(flatten)]
        common: Common,
        /// Trained model file.
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
        /// Dataset CSV to predict over.
        #[arg(long, value_name = "FILE")]
        dataset: PathBuf,
        /// Timed passes; defaults to the latency_repeats key.
        #[arg(long, value_name = "N")]
        repeats: Option<usize>,
        /// Discarded warm-up passes; defaults to the latency_warmup key.
        #[arg(long, value_name = "N")]
        warmup: Option<usize>,
    },
}

/// PULSEGATE_THREADS caps the rayon pool used for parallel candidate
/// evaluation; unset means rayon's default (one thread per core).
fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var("PULSEGATE_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| {
            CliError::Config(format!(
                "PULSEGATE_THREADS must be a positive integer, got `{value}`"
            ))
        })?;
    // Failure here means a pool already exists; that one keeps winning.
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global();
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Synth { common } => commands::cmd_synth(&common.resolve()?),
        Command::Preprocess { common } => commands::cmd_preprocess(&common.resolve()?),
        Command::Train { common } => commands::cmd_train(&common.resolve()?),
        Command::Optimize { common, surrogate } => {
            commands::cmd_optimize(&common.resolve()?, surrogate)
        }
        Command::Transfer {
            common,
            model,
            dataset,
            eval_dataset,
            epochs,
        } => commands::cmd_transfer(
            &common.resolve()?,
            &model,
            &dataset,
            eval_dataset.as_deref(),
            epochs,
        ),
        Command::Evaluate {
            common,
            model,
            dataset,
        } => commands::cmd_evaluate(&common.resolve()?, &model, &dataset),
        Command::Profile {
            common,
            model,
            dataset,
            repeats,
            warmup,
        } => commands::cmd_profile(&common.resolve()?, &model, &dataset, repeats, warmup),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("pulsegate: {e}");
        std::process::exit(e.exit_code());
    }
}
