//! Front end of `homoclinic-core`: configuration, subcommands and their
//! JSON/CSV outputs.

pub mod commands;
pub mod config;
pub mod error;
pub mod verify;

pub use config::RunConfig;
pub use error::CliError;
