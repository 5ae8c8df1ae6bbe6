//! CLI error type carrying the process exit code mandated per failure class.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical divergence: {0}")]
    Divergence(String),
    #[error("structure error: {0}")]
    Structure(String),
    #[error("unknown metric selector: {0}")]
    UnknownSelector(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Divergence(_) => 4,
            CliError::Structure(_) => 5,
            CliError::UnknownSelector(_) => 6,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> CliError {
        CliError::Data(e.to_string())
    }
}

impl From<cw_core::CwError> for CliError {
    fn from(e: cw_core::CwError) -> CliError {
        use cw_core::CwError;
        // Unwrap the step annotation to classify the underlying failure.
        let inner = match &e {
            CwError::TrainStep { source, .. } => source.as_ref(),
            other => other,
        };
        match inner {
            CwError::Divergence(_) => CliError::Divergence(e.to_string()),
            CwError::Structure(_) => CliError::Structure(e.to_string()),
            CwError::Config(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> CliError {
        CliError::Data(e.to_string())
    }
}
