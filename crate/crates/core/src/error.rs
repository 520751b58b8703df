use thiserror::Error;

use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("extent mismatch: {0}")]
    Extent(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("png decode: {0}")]
    PngDecode(#[from] png::DecodingError),
    #[error("png encode: {0}")]
    PngEncode(#[from] png::EncodingError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },
    #[error("no valid context: every patch lies inside the hole")]
    NoValidContext,
    #[error("non-finite loss at step {step} (batch seed {batch_seed}): {detail}")]
    NonFiniteLoss {
        step: u64,
        batch_seed: u64,
        detail: String,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn extent(msg: impl Into<String>) -> Error {
    Error::Extent(msg.into())
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::Invalid(msg.into())
}
