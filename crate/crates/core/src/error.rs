//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A tensor or activation went non-finite; the message names the layer
    /// or tensor that produced it.
    #[error("numeric failure: {0}")]
    NumericFailure(String),

    /// Training loss exceeded the divergence threshold.
    #[error("training diverged at stage {stage} iteration {iter}: loss {loss}")]
    Divergence { stage: u8, iter: usize, loss: f64 },

    #[error("corrupt model: {0}")]
    CorruptModel(String),

    #[error("unsupported scale {0} (expected 2, 3 or 4)")]
    UnsupportedScale(u8),

    /// EPSNR is undefined when the edge mask selects no pixels.
    #[error("empty edge mask: no boundary pixels within radius")]
    EmptyMask,

    #[error("empty manifest")]
    EmptyManifest,

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Stable process exit code for the CLI: 2 for input errors, 3 for
    /// numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NumericFailure(_) | Error::Divergence { .. } => 3,
            _ => 2,
        }
    }
}
