//! Experiment runner for `adamrel-core`.
//!
//! Each subcommand resolves a flat configuration (preset, then file, then
//! flags), writes it to `manifest.txt` in the output directory, and then
//! produces its CSVs next to it. Passing a manifest back as `--config`
//! repeats the run exactly.

pub mod config;
pub mod presets;
pub mod run;

pub use config::{ConfigError, Invocation, Kind, Settings};
pub use run::{execute, run, Report};

/// Recorded in every manifest.
pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");
