//! Process-level error classes and their exit codes.
//!
//! Every failure a command can hit is folded into one of five classes so the
//! shell sees a stable contract: 2 config, 3 data or io, 4 numeric failure,
//! 5 search failure, 6 horizon mismatch (0 is success).

use std::path::Path;

use pulsegate_core::gaopt::GaError;
use pulsegate_core::ingest::IngestError;
use pulsegate_core::models::ModelError;
use pulsegate_core::windowing::{DatasetCsvError, WindowError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, config keys, or model/search settings.
    #[error("{0}")]
    Config(String),
    /// Unreadable, malformed, or structurally unusable inputs.
    #[error("{0}")]
    Data(String),
    /// Training produced a non-finite loss or an internal numeric fault.
    #[error("{0}")]
    Numeric(String),
    /// The architecture search ended with no usable candidate.
    #[error("{0}")]
    Search(String),
    /// A model and a dataset disagree on the prediction horizon.
    #[error("{0}")]
    Horizon(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Data(_) => 3,
            Self::Numeric(_) => 4,
            Self::Search(_) => 5,
            Self::Horizon(_) => 6,
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::BadSpec(_) => Self::Config(e.to_string()),
            ModelError::NonFiniteLoss => Self::Numeric(e.to_string()),
            ModelError::HorizonMismatch { .. } => Self::Horizon(e.to_string()),
            // Container faults mean the input file is unusable, not that the
            // run was misconfigured.
            ModelError::BadMagic
            | ModelError::VersionMismatch { .. }
            | ModelError::ChecksumMismatch
            | ModelError::BadContainer(_) => Self::Data(e.to_string()),
            ModelError::Net(_) | ModelError::Boost(_) => Self::Numeric(e.to_string()),
        }
    }
}

impl From<GaError> for CliError {
    fn from(e: GaError) -> Self {
        match e {
            GaError::BadConfig(_) => Self::Config(e.to_string()),
            GaError::AllDiverged | GaError::WidthMismatch { .. } => Self::Search(e.to_string()),
        }
    }
}

impl From<WindowError> for CliError {
    fn from(e: WindowError) -> Self {
        match e {
            // Parameter problems are config; everything else reflects the
            // data actually seen (too few patients, one-class cohorts, ...).
            WindowError::BadParams(_) => Self::Config(e.to_string()),
            _ => Self::Data(e.to_string()),
        }
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        Self::Data(e.to_string())
    }
}

impl From<DatasetCsvError> for CliError {
    fn from(e: DatasetCsvError) -> Self {
        Self::Data(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::Data(format!("csv error: {e}"))
    }
}

/// Wrap an io error with the path it struck.
pub fn io_at(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}
