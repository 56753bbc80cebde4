//! Experiment harness: configuration, on-disk results and reports, and the
//! subcommands behind the `covlab` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod report;
pub mod results;

pub use config::{ExperimentConfig, Overrides};
pub use error::{CliError, CliResult};
