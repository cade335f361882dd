use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the solver and its diagnostics.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Every schema violation found while loading a configuration file.
    #[error("configuration has {} violation(s):\n  {}", .0.len(), .0.join("\n  "))]
    ConfigViolations(Vec<String>),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("cross-section assumption violated at node pair ({i}, {j}): sigma = {value} < lambda = {bound}")]
    AssumptionViolation {
        i: usize,
        j: usize,
        value: f64,
        bound: f64,
    },

    #[error("z-derivatives of order {order} are not available for the {family} cross-section family")]
    UnsupportedDerivative { family: &'static str, order: usize },

    #[error("incompatible Poisson source: mean {mean:e} exceeds tolerance {tol:e}")]
    Compatibility { mean: f64, tol: f64 },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("problem too large: {0}")]
    TooLarge(String),

    #[error("non-finite value detected at t = {t}; last valid state written to {dump:?}")]
    NonFinite { t: f64, dump: Option<PathBuf> },

    #[error("I/O error on {path:?}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to parse {path:?}: {message}")]
    Parse { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
