use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use local_ppi::error::ErrorClass;

mod commands;
mod inputs;

#[derive(Debug, Parser)]
#[command(name = "local-ppi", version, about = "Local prediction-powered inference for function values and gradients")]
struct Cli {
    /// Worker threads for resampling and experiments; results do not depend on it.
    #[arg(long, global = true, env = "LOCAL_PPI_JOBS")]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a simulated bundle (labeled, unlabeled, truth and manifest).
    Simulate(commands::SimulateArgs),
    /// Estimate m(x) and its gradient at one target, with uncertainty.
    Infer(Box<commands::InferArgs>),
    /// Run an experiment described by a JSON spec.
    Experiment(commands::ExperimentArgs),
    /// Fit PCA on selected columns and write the projection.
    Pca(commands::PcaArgs),
    /// Report prediction error against labels.
    PredictQuality(commands::QualityArgs),
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<local_ppi::Error>().map(local_ppi::Error::class) {
        Some(ErrorClass::Singular) => 3,
        Some(ErrorClass::Io) => 4,
        Some(ErrorClass::Input) | None => 2,
    }
}

/// Write to `out`, or stdout when absent.
pub(crate) fn emit(out: Option<&PathBuf>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| local_ppi::Error::io(path, e))
            .context("writing output"),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .context("configuring the worker pool")?;
    }
    match cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Infer(a) => commands::infer(*a),
        Command::Experiment(a) => commands::experiment(a),
        Command::Pca(a) => commands::pca(a),
        Command::PredictQuality(a) => commands::predict_quality(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
