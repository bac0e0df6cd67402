use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A physical parameter is outside its allowed domain.
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("time grid is too short: {0}")]
    GridTooShort(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("integration step too coarse: halving the step changed the peak by {relative_change:.3e} (relative)")]
    StepTooCoarse { relative_change: f64 },

    #[error("fit did not converge after {iterations} iterations")]
    NonConvergence { iterations: usize },

    #[error("fitted value out of range: {0}")]
    FitOutOfRange(String),

    #[error("malformed configuration: {0}")]
    Config(String),

    #[error("malformed data file {path}: {reason}")]
    DataFormat { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

/// Process exit codes, stable across releases.
pub mod exit_code {
    pub const SUCCESS: i32 = 0;
    pub const CONFIG: i32 = 2;
    pub const PHYSICS: i32 = 3;
    pub const DATA: i32 = 4;
}

impl Error {
    /// Configuration problems map to 2, physics or numerical failures to 3,
    /// unreadable or inconsistent data to 4.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Json(_) => exit_code::CONFIG,
            Error::InvalidParameter { .. }
            | Error::GridTooShort(_)
            | Error::Degenerate(_)
            | Error::StepTooCoarse { .. }
            | Error::NonConvergence { .. }
            | Error::FitOutOfRange(_) => exit_code::PHYSICS,
            Error::GridMismatch(_) | Error::DataFormat { .. } | Error::Io(_) | Error::Csv(_) => {
                exit_code::DATA
            }
        }
    }
}
