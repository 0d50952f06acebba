//! Error type shared by every module.

use thiserror::Error;

/// Errors raised by the estimation pipeline.
///
/// The variants map onto the CLI exit codes: validation failures (bad input,
/// violated preconditions) and numerical failures (singular systems,
/// non-finite values) are kept apart so callers can react differently.
#[derive(Debug, Error)]
pub enum FhscError {
    /// Input data or parameters violate a documented precondition.
    #[error("validation error: {0}")]
    Validation(String),
    /// A numerical procedure failed (singular matrix, non-finite result, ...).
    #[error("numerical error: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, FhscError>;

/// Shorthand for building a [`FhscError::Validation`].
pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(FhscError::Validation(msg.into()))
}

/// Shorthand for building a [`FhscError::Numerical`].
pub(crate) fn numerical<T>(msg: impl Into<String>) -> Result<T> {
    Err(FhscError::Numerical(msg.into()))
}
