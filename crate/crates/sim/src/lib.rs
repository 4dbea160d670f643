//! Experiment runner for the DMA beamforming simulator: configuration files,
//! scheme execution with parallel Monte-Carlo evaluation, parameter sweeps
//! and CSV export.

pub mod config;
pub mod error;
pub mod experiment;
pub mod sweep;

pub use config::RunConfig;
pub use error::SimError;
pub use experiment::{run_experiment, ExperimentResult, Scheme};
pub use sweep::{sweep, SweepVariable};
