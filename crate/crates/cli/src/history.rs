//! Line-delimited training history: one JSON object per iteration with
//! fields `iteration`, `phase`, `k`, `loss`, `elapsed_ms`.
//!
//! `elapsed_ms` is the only timing-dependent field; [`strip_timing`] produces
//! the canonical form used for byte-level determinism comparisons.

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;
use voxtr_core::distill::TrainHistory;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct HistoryRecord {
    pub iteration: usize,
    pub phase: String,
    pub k: usize,
    pub loss: f32,
    pub elapsed_ms: f64,
}

pub fn write_history(path: &Path, history: &TrainHistory) -> Result<()> {
    let mut out = String::new();
    for record in &history.records {
        let line = serde_json::to_string(&HistoryRecord {
            iteration: record.iteration,
            phase: record.phase.label().to_string(),
            k: record.k,
            loss: record.loss,
            elapsed_ms: record.elapsed_ms,
        })?;
        out.push_str(&line);
        out.push('\n');
    }
    fs::write(path, out).with_context(|| format!("writing history {}", path.display()))
}

pub fn read_history(path: &Path) -> Result<Vec<HistoryRecord>> {
    let contents =
        fs::read_to_string(path).with_context(|| format!("reading history {}", path.display()))?;
    contents
        .lines()
        .map(|line| serde_json::from_str(line).context("parsing history record"))
        .collect()
}

/// Re-serialize history lines with the timing field removed, for
/// determinism comparisons.
pub fn strip_timing(contents: &str) -> Result<String> {
    let mut out = String::new();
    for line in contents.lines() {
        let mut value: serde_json::Value = serde_json::from_str(line)?;
        value
            .as_object_mut()
            .context("history line is not an object")?
            .remove("elapsed_ms");
        out.push_str(&serde_json::to_string(&value)?);
        out.push('\n');
    }
    Ok(out)
}
