use thiserror::Error;

/// Errors raised by the balancing, selection, simulation and I/O routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("entry ({row}, {col}) = {value} is not strictly positive")]
    NotStrictlyPositive { row: usize, col: usize, value: f64 },

    #[error("row {row} sums to zero; the matrix cannot be balanced")]
    ZeroRowSum { row: usize },

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    MaxIterationsExceeded { iterations: usize, residual: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("target marginals disagree: row targets sum to {row_total}, column targets to {col_total}")]
    MarginalMismatch { row_total: f64, col_total: f64 },

    #[error("matrix is not symmetric at ({row}, {col})")]
    NotSymmetric { row: usize, col: usize },

    #[error("sample is empty")]
    EmptySample,

    #[error("kernel marginal vanishes at x = {position} (bandwidth too small for the sample)")]
    DegenerateMarginal { position: f64 },

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("every candidate failed during selection")]
    AllCandidatesFailed,

    #[error("out of range at line {line}: {message}")]
    OutOfRange { line: usize, message: String },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidValue(msg.into())
    }

    /// True for failures caused by the iteration budget rather than bad input.
    pub fn is_non_convergence(&self) -> bool {
        matches!(self, Error::MaxIterationsExceeded { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
