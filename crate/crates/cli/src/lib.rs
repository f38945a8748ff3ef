//! The `soilcast` command line: configuration, the five subcommands and the
//! artifact manifest they maintain.

pub mod commands;
pub mod config;
pub mod manifest;

use std::path::Path;

pub use commands::*;
pub use config::*;
pub use manifest::{Manifest, MANIFEST_FILE};

/// Environment variable bounding the grid worker pool.
pub const JOBS_ENV: &str = "SOILCAST_JOBS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("no cached data for station {station} ({path}); run `soilcast ingest` first")]
    MissingCache { station: String, path: String },
    #[error(transparent)]
    Core(#[from] soilcast::Error),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Failed(format!("{}: {e}", path.display()))
    }

    /// 2 for usage and configuration errors, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }
}
