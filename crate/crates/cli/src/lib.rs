//! Dataset loading, configuration and subcommands behind the `slamfrontkit`
//! binary.

pub mod commands;
pub mod config;
pub mod dataset;

pub use commands::CliError;
pub use config::RunConfig;
