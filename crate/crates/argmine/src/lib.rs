//! File formats, checkpoints and the command-line front end for
//! `argmine-core`.

pub mod binio;
pub mod checkpoint;
pub mod commands;
pub mod embeddings;
pub mod error;
pub mod formats;
pub mod report;
pub mod run_config;

pub use error::{CliError, Result};
