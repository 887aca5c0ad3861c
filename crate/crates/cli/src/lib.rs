//! Command-line front end: configuration, data ingestion and result export
//! for the `suscept` models.

pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod output;

pub use error::{CliError, Result};
