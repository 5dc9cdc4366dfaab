use std::path::PathBuf;

use thiserror::Error;
use wdl_core::WdlError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] WdlError),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed input file, with the file and location in the message.
    #[error("{0}")]
    Input(String),

    #[error("config: {0}")]
    Config(String),

    #[error("check failed: {0}")]
    CheckFailed(String),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// 1 validation, 2 numerical instability, 3 failed check.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(WdlError::Instability { .. } | WdlError::NoConvergence(_)) => 2,
            CliError::CheckFailed(_) => 3,
            _ => 1,
        }
    }
}
