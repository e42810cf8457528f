//! Experiment harness for the `crowdmeta` library: configuration, metrics
//! documents and the subcommands of the `crowdmeta` binary.

pub mod app;
pub mod benchmark;
pub mod commands;
pub mod config;
pub mod error;
pub mod metrics;

pub use error::{CliError, CliResult};
