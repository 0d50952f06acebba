//! CLI error type and its exit-code mapping.

use std::path::{Path, PathBuf};

use fhsc::FhscError;
use thiserror::Error;

/// Exit code for successful runs.
pub const EXIT_OK: i32 = 0;
/// Exit code for rejected input or parameters.
pub const EXIT_VALIDATION: i32 = 2;
/// Exit code for numerical failures inside the estimation pipeline.
pub const EXIT_NUMERICAL: i32 = 3;
/// Exit code for file-system failures.
pub const EXIT_IO: i32 = 4;

/// Errors surfaced by a CLI command.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("validation error: {0}")]
    Validation(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Numerical(_) => EXIT_NUMERICAL,
            CliError::Io { .. } => EXIT_IO,
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Maps a CSV error: underlying I/O failures keep exit code 4, malformed
    /// content is a validation error.
    pub fn csv(path: &Path, err: csv::Error) -> Self {
        if err.is_io_error() {
            match err.into_kind() {
                csv::ErrorKind::Io(e) => CliError::io(path, e),
                _ => unreachable!("is_io_error implies ErrorKind::Io"),
            }
        } else {
            CliError::Validation(format!("{}: {err}", path.display()))
        }
    }
}

impl From<FhscError> for CliError {
    fn from(err: FhscError) -> Self {
        match err {
            FhscError::Validation(m) => CliError::Validation(m),
            FhscError::Numerical(m) => CliError::Numerical(m),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Shorthand for building a [`CliError::Validation`].
pub fn invalid<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Validation(msg.into()))
}
