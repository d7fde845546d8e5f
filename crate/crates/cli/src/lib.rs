//! Library side of the `kale` binary: config parsing, CSV i/o and the
//! subcommand implementations, kept here so tests can drive them directly.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;

pub use error::{CliError, CliResult};
