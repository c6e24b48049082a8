use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("{context}: {source}")]
    Domain { context: String, source: cheyette_core::Error },

    #[error("{0}")]
    Arbitrage(String),

    #[error("simulation failed: {0}")]
    Simulation(cheyette_core::Error),

    #[error("calibration failed: {0}")]
    Calibration(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) | CliError::Io { .. } | CliError::Parse { .. } => 2,
            CliError::Domain { .. } | CliError::Arbitrage(_) => 3,
            CliError::Simulation(_) => 4,
            CliError::Calibration(_) => 5,
        }
    }

    pub(crate) fn domain(context: impl Into<String>) -> impl FnOnce(cheyette_core::Error) -> Self {
        let context = context.into();
        move |source| CliError::Domain { context, source }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        CliError::Parse { path: path.into(), message: message.to_string() }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
