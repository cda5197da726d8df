//! Command-line pipeline: synthetic data, ingestion, training, evaluation,
//! forecasting, lag curves, clustering and checkpoint inspection.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use transitnet_core::autodiff::AutodiffError;
use transitnet_core::cluster::ClusterError;
use transitnet_core::data::DataError;
use transitnet_core::eval::EvalError;
use transitnet_core::forecast::ForecastError;
use transitnet_core::layers::LayerError;
use transitnet_core::model::ModelError;
use transitnet_core::train::TrainError;

pub use config::RunConfig;

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "transitnet", version, about = "Station-level transit ridership forecasting")]
pub struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Caps the worker thread count.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic network with archetypal ridership.
    Synth,
    /// Aggregate boarding records onto the service grid.
    Ingest,
    /// Train a model, or continue from the configured checkpoint.
    Train {
        /// Fine-tune the checkpoint at `paths.checkpoint` instead of starting fresh.
        #[arg(long)]
        resume: bool,
    },
    /// Score a checkpoint and the persistence baselines on the evaluation periods.
    Evaluate,
    /// Iterative multi-step forecast from one origin.
    Forecast {
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Per-lag scores of iterative forecasts over every origin of the forecast period.
    LagCurve,
    /// Group stations by weekly ridership profile.
    Cluster,
    /// Print a checkpoint's configuration and training lineage.
    InspectCheckpoint {
        /// Defaults to `paths.checkpoint`.
        path: Option<PathBuf>,
    },
}

/// A configuration or argument problem.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match commands::dispatch(cli) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

/// Maps a failure to the usage, data or numeric exit code.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(code) = classify(cause) {
            return code;
        }
    }
    EXIT_DATA
}

fn classify(e: &(dyn std::error::Error + 'static)) -> Option<i32> {
    if e.is::<UsageError>() || e.is::<toml::de::Error>() {
        return Some(EXIT_USAGE);
    }
    if e.is::<AutodiffError>() {
        return Some(EXIT_NUMERIC);
    }
    if let Some(t) = e.downcast_ref::<TrainError>() {
        return Some(match t {
            TrainError::Config(_) => EXIT_USAGE,
            TrainError::Contract(_) => EXIT_DATA,
            TrainError::NonFiniteGradient(_) | TrainError::Diverged { .. } => EXIT_NUMERIC,
            TrainError::Model(m) => model_code(m),
        });
    }
    if let Some(m) = e.downcast_ref::<ModelError>() {
        return Some(model_code(m));
    }
    if let Some(f) = e.downcast_ref::<ForecastError>() {
        return Some(match f {
            ForecastError::Model(m) => model_code(m),
            ForecastError::Eval(e) => eval_code(e),
            _ => EXIT_DATA,
        });
    }
    if let Some(v) = e.downcast_ref::<EvalError>() {
        return Some(eval_code(v));
    }
    if let Some(d) = e.downcast_ref::<DataError>() {
        return Some(if matches!(d, DataError::Config(_) | DataError::InvalidInterval(_) | DataError::InvalidServiceWindow(_)) {
            EXIT_USAGE
        } else {
            EXIT_DATA
        });
    }
    if let Some(c) = e.downcast_ref::<ClusterError>() {
        return Some(if matches!(c, ClusterError::Config(_)) { EXIT_USAGE } else { EXIT_DATA });
    }
    None
}

fn model_code(m: &ModelError) -> i32 {
    match m {
        ModelError::Config(_) | ModelError::Layer(LayerError::Config(_)) => EXIT_USAGE,
        ModelError::Autodiff(_) | ModelError::Layer(LayerError::Autodiff(_)) => EXIT_NUMERIC,
        _ => EXIT_DATA,
    }
}

fn eval_code(e: &EvalError) -> i32 {
    match e {
        EvalError::ZeroVariance | EvalError::UndefinedRatio => EXIT_NUMERIC,
        _ => EXIT_DATA,
    }
}
