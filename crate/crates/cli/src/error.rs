//! Error classes and their process exit codes.

use std::path::PathBuf;

use fairlens_core::backend::BackendError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("stage {stage} needs {} from an earlier stage; run `fairlens {needs}` first", path.display())]
    StageDependencyMissing { stage: &'static str, needs: &'static str, path: PathBuf },
    #[error("backend failure: {0}")]
    BackendFailure(String),
    #[error("too many failed generations: {0}")]
    PartialFailureAboveCeiling(BackendError),
    #[error("{0}")]
    Failure(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Failure(_) => 1,
            CliError::ConfigInvalid(_) => 2,
            CliError::StageDependencyMissing { .. } => 3,
            CliError::BackendFailure(_) => 4,
            CliError::PartialFailureAboveCeiling(_) => 5,
        }
    }

    pub fn failure(e: impl std::fmt::Display) -> Self {
        CliError::Failure(e.to_string())
    }

    pub fn config(e: impl std::fmt::Display) -> Self {
        CliError::ConfigInvalid(e.to_string())
    }
}

impl From<BackendError> for CliError {
    fn from(e: BackendError) -> Self {
        match e {
            BackendError::ExcessiveFailureRate { .. } => CliError::PartialFailureAboveCeiling(e),
            BackendError::InvalidConfig(m) => CliError::ConfigInvalid(m),
            other => CliError::BackendFailure(other.to_string()),
        }
    }
}

impl From<fairlens_core::jsonl::JsonlError> for CliError {
    fn from(e: fairlens_core::jsonl::JsonlError) -> Self {
        CliError::failure(e)
    }
}

impl From<fairlens_core::report::ReportError> for CliError {
    fn from(e: fairlens_core::report::ReportError) -> Self {
        CliError::failure(e)
    }
}

impl From<fairlens_core::scoring::ScoringError> for CliError {
    fn from(e: fairlens_core::scoring::ScoringError) -> Self {
        CliError::failure(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::failure(e)
    }
}
