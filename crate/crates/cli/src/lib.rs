//! Command-line front end: alignment and tree I/O, run configuration and
//! the `embed`, `sample`, `train` and `loglik` commands.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod newick;
pub mod params;

pub use commands::{run, Cli, Outcome};
pub use error::CliError;
