use std::path::PathBuf;

use gaitkit_tensor::codec::CodecError;
use gaitkit_tensor::TensorError;
use thiserror::Error;

use crate::checkpoint::CheckpointError;
use crate::gaitdata::GseqError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("tensor record: {0}")]
    Codec(#[from] CodecError),
    #[error("sequence file {path}: {source}")]
    Gseq {
        path: PathBuf,
        #[source]
        source: GseqError,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("checkpoint {path}: {source}")]
    Checkpoint {
        path: PathBuf,
        #[source]
        source: CheckpointError,
    },
    #[error("checkpoint {path}: {msg}")]
    CheckpointContent { path: PathBuf, msg: String },
    #[error("checkpoint was produced by a different configuration (digest {found}, expected {expected})")]
    ConfigMismatch { expected: String, found: String },
    #[error("non-finite loss at iteration {iteration}; batch entries {entries:?}")]
    NonFiniteLoss { iteration: u64, entries: Vec<usize> },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }
}
