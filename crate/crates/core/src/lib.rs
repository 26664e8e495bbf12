//! Data-parallel training on a desk: sharded data, deterministic batching,
//! collective communication, and bit-reproducible checkpoints.

pub mod checkpoint;
pub mod codec;
pub mod comm;
pub mod config;
pub mod data;
pub mod engine;
pub mod numerics;
pub mod optim;
pub mod registry;

pub use config::RunConfig;
