//! Declarative front end for the `tiebout` solver: TOML experiment configs
//! in, JSON reports and CSV plot data out.

pub mod commands;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod report;

pub use commands::{run, Command, Flags, RunOutcome};
pub use config::ExperimentConfig;
pub use error::CliError;
