//! Experiment orchestration: configuration, twin runs, verification suites
//! and parameter sweeps.

pub mod config;
pub mod sweep;
mod svg;
pub mod twin;
pub mod verify;

pub use config::ExperimentConfig;
pub use twin::{run_twin, write_twin, TwinRun};
