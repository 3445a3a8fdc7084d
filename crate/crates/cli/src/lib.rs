//! Command implementations behind the `dusego` binary.

pub mod commands;
pub mod config;
pub mod error;

pub use error::{CliError, Result};
