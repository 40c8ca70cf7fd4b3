//! Command implementations behind the `servecurve` binary: ingest, fit,
//! compare, predict and report. Every command writes under one output
//! directory and leaves a `manifest.json` holding the configuration echo and
//! the SHA-256 of every input and output file.

use std::path::{Path, PathBuf};

mod artifacts;
mod commands;
pub mod config;

pub use commands::{
    cmd_compare, cmd_fit, cmd_ingest, cmd_predict, cmd_report, discover_reports, FitOutcome, IngestOutcome,
    IngestSummary,
};
pub use config::RunConfig;

/// Failures with a fixed process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("input schema error: {0}")]
    Schema(servecurve::Error),

    #[error("no data: {0}")]
    Empty(String),

    #[error("sampler initialization failed: {0}")]
    SamplerInit(servecurve::Error),

    #[error("dataset mismatch: {0}")]
    Mismatch(String),

    #[error("missing draws in {}: {reason}", dir.display())]
    MissingDraws { dir: PathBuf, reason: String },

    #[error("max split R-hat {0:.4} exceeds 1.1")]
    NotConverged(f64),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(servecurve::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io { .. } | CliError::Core(_) => 1,
            CliError::Schema(_) => 2,
            CliError::Empty(_) => 3,
            CliError::SamplerInit(_) => 4,
            CliError::Mismatch(_) => 5,
            CliError::MissingDraws { .. } => 6,
            CliError::NotConverged(_) => 7,
        }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> CliError {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

impl From<servecurve::Error> for CliError {
    fn from(e: servecurve::Error) -> Self {
        match e {
            servecurve::Error::DatasetMismatch(a, b) => CliError::Mismatch(format!("{a} vs {b}")),
            other => CliError::Core(other),
        }
    }
}
