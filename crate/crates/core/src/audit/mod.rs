//! Config-driven orchestration of a full audit, its outputs and run log.

pub mod config;
pub mod report;
pub mod run;
pub mod simulate;

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::digest::sha256_hex;

pub use config::{AuditConfig, BackendKind, ConfigError, SCHEMA_VERSION};
pub use report::{render_report, ReportFormat};
pub use run::{
    run_audit, run_with, AuditResult, CellDiagnostics, FailureStage, RunManifest, UnitFailure,
};
pub use simulate::{power_study, PowerStudyConfig, PowerStudyResult};

#[derive(Debug, thiserror::Error)]
pub enum AuditError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("{failed} of {total} units failed, above the allowed fraction {limit}:\n  {}", .summary.join("\n  "))]
    FailureThreshold {
        failed: usize,
        total: usize,
        limit: f64,
        summary: Vec<String>,
    },
    #[error("writing outputs: {0}")]
    Io(#[from] std::io::Error),
}

impl From<ConfigError> for AuditError {
    fn from(e: ConfigError) -> Self {
        AuditError::Config(e.to_string())
    }
}

impl AuditError {
    /// Process exit status for the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            AuditError::Config(_) => 2,
            AuditError::FailureThreshold { .. } => 3,
            AuditError::Data(_) => 4,
            AuditError::Io(_) => 1,
        }
    }
}

pub const REPORT_MD: &str = "report.md";
pub const REPORT_CSV: &str = "report.csv";
pub const RESULT_JSON: &str = "result.json";
pub const MANIFEST_DIR: &str = "manifest";

/// One line of the append-only run log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub tool_version: String,
    pub config_digest: String,
    /// SHA-256 of the written `result.json`.
    pub result_sha256: String,
    pub backend: crate::backend::BackendTag,
    pub units: usize,
    pub failed_units: usize,
    /// The configuration as TOML, enough to rerun against the same replay store.
    pub config_toml: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputPaths {
    pub report_md: PathBuf,
    pub report_csv: PathBuf,
    pub result_json: PathBuf,
    pub manifest_log: PathBuf,
}

fn unix_ms(t: SystemTime) -> u128 {
    t.duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

pub fn manifest_log_path(dir: &Path, config_digest: &str) -> PathBuf {
    dir.join(MANIFEST_DIR)
        .join(format!("{config_digest}.jsonl"))
}

/// Writes the three reports and appends a timestamped entry to the run log
/// named after the config digest.
pub fn write_outputs(
    result: &AuditResult,
    dir: &Path,
    started: SystemTime,
) -> Result<OutputPaths, AuditError> {
    fs::create_dir_all(dir.join(MANIFEST_DIR))?;
    let paths = OutputPaths {
        report_md: dir.join(REPORT_MD),
        report_csv: dir.join(REPORT_CSV),
        result_json: dir.join(RESULT_JSON),
        manifest_log: manifest_log_path(dir, &result.manifest.config_digest),
    };
    let json = report::render_json(result);
    fs::write(&paths.result_json, &json)?;
    fs::write(&paths.report_md, report::render_markdown(result))?;
    fs::write(&paths.report_csv, report::render_csv(result))?;
    let m = &result.manifest;
    let entry = ManifestEntry {
        started_unix_ms: unix_ms(started),
        finished_unix_ms: unix_ms(SystemTime::now()),
        tool_version: m.tool_version.clone(),
        config_digest: m.config_digest.clone(),
        result_sha256: sha256_hex(json.as_bytes()),
        backend: m.backend,
        units: m.units,
        failed_units: m.failed_units,
        config_toml: m.config.to_toml(),
    };
    let mut log = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&paths.manifest_log)?;
    writeln!(
        log,
        "{}",
        serde_json::to_string(&entry).expect("entry serializes")
    )?;
    Ok(paths)
}

/// Reads a `result.json` written by [`write_outputs`].
pub fn read_result(path: &Path) -> Result<AuditResult, AuditError> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| AuditError::Data(format!("{}: {e}", path.display())))
}
