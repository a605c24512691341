use std::process::ExitCode;

use collapse_core::{HarnessError, KernelError, SimError, SpectrumError, TheoryError};
use thiserror::Error;

/// Command failures, grouped by the exit code they map to.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("internal error: {0}")]
    Internal(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("theory domain error: {0}")]
    Theory(String),
    #[error("data error: {0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Internal(_) => 1,
            CliError::Config(_) => 2,
            CliError::Theory(_) => 3,
            CliError::Data(_) => 4,
        })
    }
}

impl From<TheoryError> for CliError {
    fn from(e: TheoryError) -> Self {
        match e {
            TheoryError::Divergent { .. } | TheoryError::DegenerateInput(_) | TheoryError::NotApplicable(_) => {
                CliError::Theory(e.to_string())
            }
            TheoryError::InvalidInput(_) | TheoryError::DimensionMismatch { .. } => CliError::Config(e.to_string()),
            TheoryError::NonConvergence { .. } => CliError::Internal(e.to_string()),
        }
    }
}

impl From<SpectrumError> for CliError {
    fn from(e: SpectrumError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::InvalidConfig(_) | SimError::DimensionMismatch { .. } => CliError::Config(e.to_string()),
            _ => CliError::Internal(e.to_string()),
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Spectrum(e) => e.into(),
            HarnessError::Sim(e) => e.into(),
            HarnessError::InvalidSpec(_) | HarnessError::InsufficientPoints { .. } => CliError::Config(e.to_string()),
            HarnessError::Io { .. } | HarnessError::Csv(_) | HarnessError::NonPositive(_) => {
                CliError::Data(e.to_string())
            }
        }
    }
}

impl From<KernelError> for CliError {
    fn from(e: KernelError) -> Self {
        match e {
            KernelError::InvalidParameter(_) | KernelError::DimensionMismatch { .. } => CliError::Config(e.to_string()),
            KernelError::Singular => CliError::Internal(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}
