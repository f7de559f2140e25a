//! Experiment orchestration for the kinlab library: a TOML configuration,
//! one subcommand per experiment, CSV outputs stamped with the config hash.

pub mod commands;
pub mod config;
pub mod output;

pub use commands::{run, Command, Summary};
pub use config::{validate, Diagnostic, ExperimentConfig, Level};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error("invalid configuration:\n{}", .0.iter().map(|d| format!("  {d}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<Diagnostic>),
    #[error(transparent)]
    Core(#[from] kinlab::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Worker count: `KINLAB_WORKERS` overrides the config value.
pub fn worker_count(cfg: &ExperimentConfig) -> Option<usize> {
    std::env::var("KINLAB_WORKERS").ok().and_then(|s| s.trim().parse().ok()).filter(|&n| n > 0).or(cfg.workers)
}
