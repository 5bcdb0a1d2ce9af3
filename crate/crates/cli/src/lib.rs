//! Experiment harness for the kac-core library: configuration, seeded runs
//! and report emission.

pub mod config;
pub mod experiments;
pub mod report;

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use thiserror::Error;

pub use config::{ConfigError, Experiment, ExperimentConfig};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] kac_core::KacError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("refusing to write a report with no checks")]
    EmptyReport,
}

impl HarnessError {
    /// Process exit status for this error: 2 for usage and configuration
    /// problems, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            HarnessError::Config(_) | HarnessError::Usage(_) => 2,
            _ => 1,
        }
    }
}

/// Summary of a completed run.
#[derive(Debug)]
pub struct RunSummary {
    pub run_id: String,
    pub checks: Vec<kac_core::verify::Check>,
    pub files: Vec<PathBuf>,
    pub all_pass: bool,
}

fn run_id() -> String {
    let nanos = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_nanos()).unwrap_or(0);
    format!("{:x}-{:x}", nanos, std::process::id())
}

/// Execute the configured experiment and write its reports under `out`.
pub fn run(cfg: &ExperimentConfig, out: &Path) -> Result<RunSummary, HarnessError> {
    let start = Instant::now();
    let outcome = experiments::run(cfg, out)?;
    let id = run_id();
    let mut files = report::emit_report(out, &id, cfg, &outcome.checks, start.elapsed().as_secs_f64())?;
    files.extend(outcome.files);
    let all_pass = report::all_pass(&outcome.checks);
    Ok(RunSummary { run_id: id, checks: outcome.checks, files, all_pass })
}
