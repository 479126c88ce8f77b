use std::fmt;

use crate::linalg::SolveReport;

/// Errors raised across sampling, assembly, solving and estimation.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("solver failure{}: {report}", level_suffix(*.level))]
    SolverFailure {
        context: &'static str,
        level: Option<usize>,
        report: SolveReport,
    },

    #[error("factorization failure: non-positive pivot {pivot:e} at row {row}")]
    FactorizationFailure { row: usize, pivot: f64 },

    #[error("numeric failure: {0}")]
    NumericFailure(String),

    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("dense guard exceeded: {size} cells > limit {limit}")]
    DenseGuard { size: usize, limit: usize },

    #[error("allocation diverged on level {level}: requested {requested} samples (cap {cap})")]
    AllocationDiverged {
        level: usize,
        requested: usize,
        cap: usize,
    },
}

fn level_suffix(level: Option<usize>) -> String {
    match level {
        Some(l) => format!(" on level {l}"),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn invalid(msg: impl fmt::Display) -> Self {
        Error::InvalidArgument(msg.to_string())
    }

    /// Attach a level tag to a solver failure; other variants pass through.
    pub fn at_level(self, level: usize) -> Self {
        match self {
            Error::SolverFailure {
                context, report, ..
            } => Error::SolverFailure {
                context,
                level: Some(level),
                report,
            },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
