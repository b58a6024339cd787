//! Command-line front end of `drowsy-mpc`: configuration and model files,
//! CSV formats, run manifests, the five subcommands and the stream daemon.

pub mod commands;
pub mod config;
pub mod daemon;
pub mod error;
pub mod manifest;
pub mod table;

pub use commands::Format;
pub use error::CliError;
