use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, FusionError>;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("coordinate ({0}, {1}, {2}) is outside the grid domain")]
    OutOfDomain(i64, i64, i64),

    /// The payload pool has no free slot left; the chosen block budget is too small
    /// for the scanned surface.
    #[error("payload pool exhausted: all {capacity} block slots are in use")]
    PoolExhausted { capacity: usize },

    #[error("block ({0}, {1}, {2}) is not allocated")]
    UnallocatedBlock(usize, usize, usize),

    #[error("registration needs at least one point match")]
    EmptyMatches,

    #[error("tracking lost: {matches} matches at iteration {iteration}")]
    TrackingLost { iteration: usize, matches: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed file: {reason}")]
    Format { path: PathBuf, reason: String },
}

impl FusionError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FusionError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        FusionError::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Process exit code used by the command line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            FusionError::TrackingLost { .. } => 2,
            FusionError::PoolExhausted { .. } => 3,
            _ => 1,
        }
    }
}
