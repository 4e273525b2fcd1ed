//! Batch front end for sotlab: experiments are described by a TOML file,
//! executed in-process, and written as CSV or JSON.

pub mod config;
pub mod error;
pub mod run;

pub use config::RunConfig;
pub use error::CliError;
pub use run::{list_experiments, run_config, run_file, RunOptions, RunOutcome};
