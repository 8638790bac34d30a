//! Command-line front end: scenario files, run orchestration and report files.

pub mod config;
pub mod error;
pub mod run;

pub use config::{parse_config, Cli, Command, CommonArgs, Overrides, RunConfig, Scenario, Task};
pub use error::{CliError, Result};
pub use run::{run, RunSummary};
