//! Command-line pipeline and labeling service.

pub mod commands;
pub mod error;
pub mod service;
pub mod workspace;

pub use commands::{run, Cli};
pub use error::{CliError, Result};
