//! Run configuration, subcommand orchestration and file artifacts.

pub mod artifacts;
pub mod config;
pub mod run;

pub use config::{parse_config, RunConfig};
pub use run::{run_subcommand, RunOutcome, RunReport, Subcommand};
