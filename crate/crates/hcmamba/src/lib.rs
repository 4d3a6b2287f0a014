//! Desk-scale HC-Mamba toolkit: netpbm IO, synthetic datasets, checkpoints,
//! run configuration, and the training, evaluation and report commands.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod netpbm;
pub mod report;
pub mod train;

pub use error::{Error, Result};
