use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's contract (bad shapes, empty batch, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Shape mismatch between tensors, naming the offending dimensions.
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    /// A computation produced a non-finite value.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// The text embedder was given an instruction with no tokens.
    #[error("empty instruction")]
    EmptyInstruction,

    /// The expert controller was asked to act with every subtask latched.
    #[error("no pending subtask")]
    NoPendingSubtask,

    /// Checkpoint format version is not one this build understands.
    #[error("checkpoint version mismatch: found {found}, expected {expected}")]
    Version { found: u32, expected: u32 },

    /// Checkpoint bytes fail structural or checksum validation.
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    /// A configuration key or value was rejected.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// I/O failure, with the path involved.
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A data file exists but does not parse as expected.
    #[error("{path}: {detail}")]
    Malformed { path: PathBuf, detail: String },
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn malformed(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Malformed {
            path: path.into(),
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
