//! Optimizers, learning-rate schedules and delayed-update accumulation.

mod accumulate;
mod optimizer;
mod schedule;

use thiserror::Error;

pub use accumulate::Accumulator;
pub use optimizer::{
    build_optimizer, optimizer_registry, Adam, OptimConfig, OptimState, Optimizer, OptimizerFactory, Sgd,
};
pub use schedule::{
    build_scheduler, inverse_sqrt_lr, linear_warmup_decay_lr, scheduler_registry, Constant, InverseSqrt, Linear,
    Scheduler, SchedulerConfig, SchedulerFactory,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("non-finite gradient or update for parameter '{0}'")]
    NonFinite(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("optimizer state error: {0}")]
    State(String),
}
