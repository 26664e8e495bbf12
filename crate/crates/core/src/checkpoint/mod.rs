//! Deterministic randomness and training-state persistence.

mod format;
mod rng;

use thiserror::Error;

pub use format::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, read_checkpoint_header, save_checkpoint, Checkpoint,
    CheckpointHeader, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use rng::{derived_rng, SeededRng};

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("unrecognized format: {0}")]
    Format(String),
    #[error("checkpoint version {found} not supported (expected {expected})")]
    Version { found: u16, expected: u16 },
    #[error("checkpoint digest mismatch: {0}")]
    Digest(String),
    #[error("only the master rank may write checkpoints")]
    NotMaster,
}

impl From<crate::codec::Truncated> for CheckpointError {
    fn from(e: crate::codec::Truncated) -> Self {
        CheckpointError::Format(e.to_string())
    }
}
