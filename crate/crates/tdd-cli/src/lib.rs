//! Batch driver for the hidden-string extension: TOML scenario in, CSV
//! artifacts and a key=value summary out.

pub mod config;
pub mod error;
pub mod run;
pub mod summary;

pub use config::{Command, Config};
pub use error::CliError;
pub use run::{run_config, run_scenario, RunOptions};
pub use summary::{export_summary, Summary};
