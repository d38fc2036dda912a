use gjs_core::Family;
use thiserror::Error;

use crate::train::TrainRecord;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] gjs_core::Error),

    #[error("shape mismatch: expected {expected} columns, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{0} is not a supported VAE regulariser")]
    UnsupportedFamily(Family),

    #[error("malformed dataset: {0}")]
    Format(String),

    #[error("training diverged in epoch {epoch}")]
    Diverged { epoch: usize, partial: Box<TrainRecord> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Png(#[from] png::EncodingError),
}

pub type Result<T> = std::result::Result<T, Error>;
