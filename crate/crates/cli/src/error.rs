use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),

    #[error("{path}: line {line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    #[error("config key `{key}`: {msg}")]
    ConfigKey { key: String, msg: String },

    #[error(transparent)]
    Model(#[from] sqbudget_core::Error),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// 1 usage/parse, 2 domain/model, 3 I/O.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Parse { .. } | CliError::ConfigKey { .. } => 1,
            CliError::Model(_) => 2,
            CliError::Io { .. } => 3,
        }
    }

    pub fn key(key: &str, err: impl std::fmt::Display) -> Self {
        CliError::ConfigKey { key: key.to_string(), msg: err.to_string() }
    }
}

pub type CliResult<T> = Result<T, CliError>;
