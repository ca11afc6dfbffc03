//! Library half of the `qsmooth` command-line tool.

pub mod config;
pub mod run;

pub use config::{load_config, load_config_with, Command, Overrides, RunConfig};
pub use run::{error_json, run, RunSummary};
