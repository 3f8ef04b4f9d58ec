use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
///
/// Solver infeasibility is not an error: it is reported through
/// [`crate::solvers::SolveStatus`] so that sweeps can record where the
/// robust classifier stops existing.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("divergence at iteration {iteration}: {reason}")]
    Divergence { iteration: usize, reason: String },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("sample generation failed: {0}")]
    Generation(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("not enough checkpoints: need {needed}, have {available}")]
    TooFewCheckpoints { needed: usize, available: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
