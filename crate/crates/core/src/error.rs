use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = ForgeError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum ForgeError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("invalid config field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shard {path}: {kind} at byte {offset}")]
    Shard {
        path: PathBuf,
        kind: ShardErrorKind,
        offset: u64,
    },

    #[error("blob: {0}")]
    Blob(String),

    #[error("non-finite activation in {layer}")]
    NonFinite { layer: String },

    #[error("training diverged at step {step} (last finite loss {last_loss})")]
    Diverged { step: usize, last_loss: f64 },

    #[error("infeasible mixture: {reason} (required budget: {required_sequences} sequences)")]
    Infeasible {
        reason: String,
        required_sequences: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShardErrorKind {
    BadMagic,
    VersionMismatch { found: u32 },
    HeaderChecksum,
    PayloadChecksum,
    Truncated,
    IdOutOfRange { id: u32 },
    TrailingBytes,
    UnequalLengths,
}

impl std::fmt::Display for ShardErrorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ShardErrorKind::BadMagic => write!(f, "bad magic"),
            ShardErrorKind::VersionMismatch { found } => write!(f, "version mismatch (found {found})"),
            ShardErrorKind::HeaderChecksum => write!(f, "header checksum mismatch"),
            ShardErrorKind::PayloadChecksum => write!(f, "payload checksum mismatch"),
            ShardErrorKind::Truncated => write!(f, "truncated file"),
            ShardErrorKind::IdOutOfRange { id } => write!(f, "token id {id} out of range"),
            ShardErrorKind::TrailingBytes => write!(f, "trailing bytes"),
            ShardErrorKind::UnequalLengths => write!(f, "sequences of unequal length"),
        }
    }
}

impl ForgeError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ForgeError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        ForgeError::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        ForgeError::InvalidInput(message.into())
    }
}
