use thiserror::Error;

use crate::solver::SolveReport;

/// Errors raised by the numerical core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("ensemble spec error: {0}")]
    Spec(String),

    #[error("lattice mismatch: {0}")]
    LatticeMismatch(String),

    #[error("compatibility error: right-hand side has mean {mean:e} (allowed {allowed:e})")]
    Compatibility { mean: f64, allowed: f64 },

    #[error("solver did not converge: {0}")]
    NotConverged(SolveReport),

    #[error("resolution constraint violated: {0}")]
    Resolution(String),

    #[error("malformed field file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
