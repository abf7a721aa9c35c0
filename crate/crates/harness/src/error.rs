use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::checkpoint::CheckpointError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("non-finite value at step {step}: {detail}{}", dump.as_ref().map(|p| format!(" (state dumped to {})", p.display())).unwrap_or_default())]
    Numeric {
        step: usize,
        detail: String,
        dump: Option<PathBuf>,
    },
    #[error(transparent)]
    Core(#[from] lpcsm_core::Error),
}

impl HarnessError {
    pub fn config(msg: impl Into<String>) -> Self {
        HarnessError::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 config, 3 numeric, 4 IO.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Numeric { .. } => 3,
            HarnessError::Io { .. } => 4,
            HarnessError::Checkpoint(CheckpointError::Io { .. }) => 4,
            HarnessError::Checkpoint(CheckpointError::ConfigMismatch { .. }) => 2,
            HarnessError::Checkpoint(_) => 4,
            HarnessError::Core(e) if e.is_non_finite() => 3,
            HarnessError::Core(_) => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
