use std::path::PathBuf;

use thiserror::Error;

/// Process exit codes, one per failure class.
pub mod exit {
    pub const OK: i32 = 0;
    pub const CHECK_FAILED: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const CONFIG: i32 = 3;
    pub const OVERRIDE: i32 = 4;
    pub const DATASET: i32 = 5;
    pub const RUNTIME: i32 = 6;
    pub const IO: i32 = 7;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),

    #[error("config {path}: {message}")]
    Config { path: PathBuf, message: String },

    #[error("override `{key}`: {message}")]
    Override { key: String, message: String },

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("{0}")]
    CheckFailed(String),

    #[error(transparent)]
    Core(#[from] mcnet::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => exit::USAGE,
            CliError::Config { .. } => exit::CONFIG,
            CliError::Override { .. } => exit::OVERRIDE,
            CliError::Dataset(_) | CliError::Parse { .. } => exit::DATASET,
            CliError::CheckFailed(_) => exit::CHECK_FAILED,
            CliError::Core(mcnet::Error::Io(_)) | CliError::Io { .. } => exit::IO,
            CliError::Core(_) => exit::RUNTIME,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
