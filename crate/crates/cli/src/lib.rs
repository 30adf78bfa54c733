//! Experiment driver: configuration, training runs, checkpoints, gradient
//! checks and ablation sweeps. The `cbm` binary is a thin layer over this.

pub mod ablate;
pub mod checkpoint;
pub mod config;
pub mod gradcheck;
pub mod run;

pub use checkpoint::Checkpoint;
pub use config::{RunConfig, TaskName};
pub use run::{MetricsRow, Run};
