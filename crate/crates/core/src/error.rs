use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Two inputs disagree on a dimension.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A parameter or input value violates its documented range.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A label or superpixel index is out of range.
    #[error("index out of range: {0}")]
    OutOfRange(String),

    /// An exhaustive search would exceed its size guard.
    #[error("instance too large: {0}")]
    TooLarge(String),

    /// A result broke an invariant its producer guarantees.
    #[error("internal invariant violated: {0}")]
    Internal(String),

    #[error("bad magic")]
    BadMagic,

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },

    #[error("unknown dtype code {0}")]
    UnknownDtype(u8),

    #[error("malformed file: {0}")]
    Malformed(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
