//! Experiment runner for the `deeptwist` binary: TOML configs, sweeps, and the
//! CSV/JSON artifacts (metrics, distortion events, summaries, spectra,
//! histograms) each run leaves behind.

pub mod config;
pub mod report;
pub mod run;

use std::path::Path;

use thiserror::Error;

pub use config::{ExperimentConfig, Mode, Sweep, SweepAxis, DATA_ROOT_ENV};
pub use run::{execute, load_data, run_experiment, Datasets, FrozenWeights, RunOutcome, Summary};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("verification failed: {0}")]
    Verify(String),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Io(_) | CliError::Verify(_) => 1,
        }
    }
}
