use thiserror::Error;

/// Errors produced by the recovery toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: String, found: String },

    #[error("measurement operator is degenerate: {0}")]
    DegenerateOperator(String),

    #[error("iterate collapsed to zero at outer iteration {0}")]
    ZeroIterate(usize),

    #[error("subproblem did not converge after {iterations} iterations (kkt_primal={kkt_primal:e}, kkt_dual={kkt_dual:e})")]
    SubproblemFailure {
        iterations: usize,
        kkt_primal: f64,
        kkt_dual: f64,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

pub(crate) fn mismatch(expected: impl ToString, found: impl ToString) -> Error {
    Error::DimensionMismatch {
        expected: expected.to_string(),
        found: found.to_string(),
    }
}
