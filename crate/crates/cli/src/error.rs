use std::path::Path;

use thiserror::Error;
use ziss_core::ZissError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Numerical(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 4,
        }
    }

    pub fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{}: {err}", path.display()))
    }
}

impl From<ZissError> for CliError {
    fn from(err: ZissError) -> Self {
        if err.is_numerical() {
            CliError::Numerical(err.to_string())
        } else {
            CliError::Validation(err.to_string())
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
