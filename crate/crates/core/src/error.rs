use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("step size underflow at tau = {tau:.6e} (h = {step:.3e})")]
    StepUnderflow { tau: f64, step: f64 },

    #[error("boundary value solver did not converge: {msg} (residual {residual:.3e})")]
    BvpFailure { msg: String, residual: f64 },

    #[error("requested {requested} modes but numerical rank is {rank}")]
    RankDeficient { requested: usize, rank: usize },

    #[error("subspaces too far on manifold (min singular value {0:.3e})")]
    SubspacesTooFar(f64),

    #[error("found only {found} of {requested} roots within the scan budget")]
    RootShortfall { found: usize, requested: usize },

    #[error("singular system: {0}")]
    Singular(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    /// True for failures of the numerical methods themselves, as opposed to
    /// bad input or I/O.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::StepUnderflow { .. }
                | Error::BvpFailure { .. }
                | Error::RankDeficient { .. }
                | Error::SubspacesTooFar(_)
                | Error::RootShortfall { .. }
                | Error::Singular(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
