//! Files, experiment runs and reports on top of `cheer-core`.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod io;
pub mod report;
pub mod runner;
pub mod stages;

pub use error::{CliError, Result};
