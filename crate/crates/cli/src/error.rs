use std::fmt::Display;
use std::path::Path;

use thiserror::Error;

/// A command failure with its process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, configuration or input files (exit code 2).
    #[error("{0}")]
    Usage(String),
    /// A computation violated one of its invariants (exit code 1).
    #[error("{0}")]
    Invariant(String),
}

impl CliError {
    pub fn usage(message: impl Display) -> Self {
        Self::Usage(message.to_string())
    }

    pub fn invariant(message: impl Display) -> Self {
        Self::Invariant(message.to_string())
    }

    /// Input error mentioning `path`.
    pub fn input(path: &Path, message: impl Display) -> Self {
        Self::Usage(format!("{}: {message}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 2,
            Self::Invariant(_) => 1,
        }
    }
}
