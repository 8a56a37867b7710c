//! Configuration, orchestration and output for the `ch` command.

pub mod checks;
pub mod commands;
pub mod config;
pub mod error;
pub mod ic;
pub mod meshspec;
pub mod output;

pub use error::CliError;
