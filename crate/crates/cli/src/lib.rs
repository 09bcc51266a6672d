//! Command implementations behind the `dip` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod experiment;

pub use error::{CliError, CliResult};
