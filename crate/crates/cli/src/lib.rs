//! Command-line front end: experiment configs, sweeps, Pareto filtering,
//! search-space reports and lowering.

pub mod commands;
pub mod config;
pub mod error;

pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
