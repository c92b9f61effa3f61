//! Command errors and their exit codes.

use std::path::Path;

use csclab_core::Error as CoreError;

/// `User` covers bad configs, arguments and input files (exit 2); `Internal`
/// covers invariant violations during computation (exit 1).
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    User(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::User(_) => 2,
            CliError::Internal(_) => 1,
        }
    }

    pub fn user(msg: impl Into<String>) -> Self {
        CliError::User(msg.into())
    }

    pub fn internal(e: impl std::fmt::Display) -> Self {
        CliError::Internal(e.to_string())
    }

    /// Failure reading or decoding `path`.
    pub fn input(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::User(format!("{}: {e}", path.display()))
    }

    /// Failure writing `path`.
    pub fn output(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::User(format!("cannot write {}: {e}", path.display()))
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Core errors raised while computing on validated inputs.
pub(crate) fn compute(e: CoreError) -> CliError {
    CliError::internal(e)
}
