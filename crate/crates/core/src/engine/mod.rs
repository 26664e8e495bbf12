//! Per-rank training driver: weighted aggregation, dummy rounds, delayed
//! updates, checkpoints and scaling metrics.

mod report;
mod run;
mod state;

use thiserror::Error;

use crate::checkpoint::CheckpointError;
use crate::comm::CommError;
use crate::config::ConfigError;
use crate::data::DataError;
use crate::numerics::NumericsError;
use crate::optim::OptimError;

pub use report::{compute_scaling_metrics, format_scaling_table, scaling_metrics, RunReport, ScalingRow, StepReport};
pub use run::{
    broadcast_parameters, check_launch, checkpoint_path, load_checkpoint_collective, train_epoch, train_inproc,
    train_run, updates_in_epoch, write_checkpoint, EpochOptions, EpochOutcome,
};
pub use state::{apply_update, check_consistency, dropout_rng, micro_step, train_step, TrainState};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Comm(#[from] CommError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("every rank was dummy for update {step}; total weight is zero")]
    AllDummy { step: u64 },
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("parameters diverged across ranks after step {step}: {digests:016x?}")]
    Divergence { step: u64, digests: Vec<u64> },
}

impl From<ConfigError> for EngineError {
    fn from(e: ConfigError) -> Self {
        EngineError::Config(e.to_string())
    }
}
