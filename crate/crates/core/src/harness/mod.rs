//! Experiment orchestration: parameter sweeps with matched theory columns,
//! CSV persistence, log-log slope fits and theory-vs-simulation comparison.

mod compare;
mod sweep;

pub use compare::{compare, fit_loglog, fit_loglog_slope, CellSummary, CompareReport, NTrend, SlopeFit};
pub use sweep::{
    read_records_csv, run_sweep, theory_for_cell, write_records_csv, ExperimentRecord, RegGrid, SweepSpec,
    TheoryStatus, SCHEMA_VERSION,
};

use std::path::PathBuf;

use thiserror::Error;

use crate::simulate::SimError;
use crate::spectra::SpectrumError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Spectrum(#[from] SpectrumError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("invalid sweep: {0}")]
    InvalidSpec(String),
    #[error("slope fit needs at least {needed} distinct T values, found {found}")]
    InsufficientPoints { needed: usize, found: usize },
    #[error("log-log fit needs positive errors, found {0}")]
    NonPositive(f64),
}
