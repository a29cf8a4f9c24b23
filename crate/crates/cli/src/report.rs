//! Run manifests and per-check result files.
//!
//! Every command writes a `manifest.json` into its output directory naming
//! the command, the seed, and the effective configuration — the manifest is
//! how any artifact in the directory can be traced back to its inputs. No
//! timestamps: manifests are part of the deterministic output set.

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    pub scale: String,
    /// Requested parallelism degree (from `VOXTR_PARALLELISM`); this build
    /// executes single-context, so values above 1 are recorded but clamped.
    pub parallelism: usize,
    pub config: serde_json::Value,
}

pub fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<()> {
    fs::create_dir_all(dir)?;
    let path = dir.join("manifest.json");
    let body = serde_json::to_string_pretty(manifest)?;
    fs::write(&path, body + "\n").with_context(|| format!("writing {}", path.display()))
}

/// Requested parallelism degree. The library executes single-context; the
/// value is validated, recorded in the manifest, and clamped to 1.
pub fn parallelism_from_env() -> Result<usize> {
    match std::env::var("VOXTR_PARALLELISM") {
        Err(_) => Ok(1),
        Ok(raw) => raw
            .parse::<usize>()
            .ok()
            .filter(|&v| v >= 1)
            .with_context(|| format!("VOXTR_PARALLELISM must be a positive integer, got {raw:?}")),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CheckResult {
    pub check: String,
    pub status: String,
    pub detail: String,
}

impl CheckResult {
    pub fn new(check: &str, pass: bool, detail: String) -> Self {
        CheckResult {
            check: check.to_string(),
            status: if pass { "pass" } else { "fail" }.to_string(),
            detail,
        }
    }

    pub fn passed(&self) -> bool {
        self.status == "pass"
    }
}

pub fn write_check_report(path: &Path, results: &[CheckResult]) -> Result<()> {
    let body = serde_json::to_string_pretty(results)?;
    fs::write(path, body + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn read_check_report(path: &Path) -> Result<Vec<CheckResult>> {
    let contents = fs::read_to_string(path)?;
    serde_json::from_str(&contents).context("parsing check report")
}
