//! Experiment driver for the neural-oscillator study: dataset generation,
//! training, evaluation, sweeps, bound tables and distribution data.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod pipeline;

pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
