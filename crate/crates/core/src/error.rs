use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Malformed or non-finite input data.
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// A parameter lies outside the domain where the operation is defined.
    #[error("domain error: {0}")]
    Domain(String),
    /// The requested combination is not implemented.
    #[error("unsupported: {0}")]
    Unsupported(String),
    /// The operator is not hypoelliptic where a hypoelliptic one is required.
    #[error("operator is not hypoelliptic: {0}")]
    NotHypoelliptic(String),
    /// Two quantities that must agree by construction disagree.
    #[error("internal consistency failure: {0}")]
    Consistency(String),
    /// A time or space integral does not converge.
    #[error("divergent integral: {0}")]
    Divergent(String),
    /// A documented precondition on the input function or region failed.
    #[error("precondition violated: {0}")]
    Precondition(String),
    /// Reading or writing a file failed.
    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn require_positive_time(t: f64) -> Result<()> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(domain(format!("time must be positive and finite, got {t}")));
    }
    Ok(())
}
