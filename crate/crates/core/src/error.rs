use std::path::PathBuf;

use thiserror::Error;

use crate::integrators::Family;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported method {family:?} of order {order}; supported: {supported}")]
    UnsupportedMethod {
        family: Family,
        order: usize,
        supported: String,
    },

    #[error("insufficient startup values: method needs {needed} history entries, buffer holds {available}")]
    InsufficientHistory { needed: usize, available: usize },

    #[error("implicit solve did not converge after {iterations} iterations (residual {residual:e})")]
    ImplicitSolve { iterations: usize, residual: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("method {family:?} cannot be used here: {reason}")]
    WrongFamily { family: Family, reason: &'static str },

    #[error("no ground truth available for problem `{0}`")]
    NoGroundTruth(String),

    #[error("variance entries must be positive, found {0}")]
    NonPositiveVariance(f64),

    #[error("likelihood underflow; observation inconsistent with ensemble")]
    LikelihoodUnderflow,

    #[error("observation schedule mismatch: {0}")]
    ObservationSchedule(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown problem `{id}`; valid options: {valid}")]
    UnknownProblem { id: String, valid: String },

    #[error("unknown method pair `{id}`; valid options: {valid}")]
    UnknownPair { id: String, valid: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// True for errors caused by bad user input rather than a failed computation.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidConfig(_)
                | Error::UnknownProblem { .. }
                | Error::UnknownPair { .. }
                | Error::UnsupportedMethod { .. }
                | Error::ObservationSchedule(_)
                | Error::NoGroundTruth(_)
        )
    }
}
