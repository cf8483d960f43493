use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument is outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A parameter record failed validation.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The result exceeds the representable floating-point range.
    #[error("overflow: {0}")]
    Overflow(String),

    /// An iterative numerical scheme did not converge.
    #[error("no convergence: {0}")]
    NoConvergence(String),

    /// A quadrature did not reach its tolerance; carries the last two estimates.
    #[error("quadrature did not converge ({context}): last {last:e}, previous {previous:e}")]
    Quadrature {
        context: String,
        last: f64,
        previous: f64,
    },

    /// The root finder was handed an interval without a sign change.
    #[error("no sign change on [{lo}, {hi}]: f(lo) = {f_lo:e}, f(hi) = {f_hi:e}")]
    NoSignChange {
        lo: f64,
        hi: f64,
        f_lo: f64,
        f_hi: f64,
    },

    /// A matrix is not symmetric, not positive definite, or singular.
    #[error("matrix error: {0}")]
    Matrix(String),

    /// Input lengths or shapes disagree.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Input data is unusable (zero variance, empty samples, bad prices).
    #[error("data error: {0}")]
    Data(String),

    /// Malformed input file.
    #[error("parse error: {0}")]
    Parse(String),

    /// An internal consistency check failed.
    #[error("internal consistency: {0}")]
    Consistency(String),
}

pub type Result<T> = std::result::Result<T, Error>;
