//! Files, formats and the command-line surface around `clda-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod csv_io;
pub mod error;
pub mod report;
pub mod runs;
pub mod svg;

pub use error::{CliError, Result};
