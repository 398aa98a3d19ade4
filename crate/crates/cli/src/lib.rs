//! Command-line front end: TOML run configs, subcommands and reproducible output directories.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::path::Path;

pub use commands::{execute, Command};
pub use config::RunConfig;
pub use error::CliError;
pub use output::{write_atomic, Outputs, Status};

/// Reads a TOML config, or the `config` object of a previous run's `manifest.json`.
pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if path.extension().is_some_and(|e| e == "json") {
        let manifest: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let cfg = manifest
            .get("config")
            .ok_or_else(|| CliError::Config(format!("{}: no \"config\" object", path.display())))?;
        return serde_json::from_value(cfg.clone()).map_err(|e| CliError::Config(format!("{}: {e}", path.display())));
    }
    RunConfig::parse(&text)
}

/// Thread count from the flag, then `TURBDIFF_THREADS`; `None` leaves rayon's default.
pub fn resolve_threads(flag: Option<usize>, env: Option<&str>) -> Result<Option<usize>, CliError> {
    if flag.is_some() {
        return Ok(flag);
    }
    match env.map(str::trim).filter(|s| !s.is_empty()) {
        None => Ok(None),
        Some(s) => s
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .map(Some)
            .ok_or_else(|| CliError::Config(format!("TURBDIFF_THREADS = {s:?} is not a positive integer"))),
    }
}
