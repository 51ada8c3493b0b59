use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{}: config hash {found} does not match the current config ({expected})", path.display())]
    HashMismatch { path: PathBuf, found: String, expected: String },
    #[error("solver failure: {0}")]
    Solver(#[source] qndmt::Error),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {message}", path.display())]
    Malformed { path: PathBuf, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::HashMismatch { .. } => 2,
            CliError::Solver(_) => 3,
            CliError::Io { .. } | CliError::Malformed { .. } => 4,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    pub fn malformed(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        CliError::Malformed { path: path.into(), message: message.to_string() }
    }
}
