//! Wall-time measurement and attention-variant cost comparison.
//!
//! Flops and scratch bytes come from the instrumented counter and are
//! deterministic; wall time is reported as median and interquartile range
//! over at least 11 recorded repetitions after at least 3 warm-ups. Absolute
//! milliseconds are informational — nothing asserts them beyond direction.

use anyhow::{bail, ensure, Result};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;
use std::time::Instant;
use voxtr_core::attention::{
    flash_mhsa, naive_mhsa, sparse_flash_mhsa, AttentionConfig, AttentionWeights,
};
use voxtr_core::cost::{analytic_flops, CostInputs};
use voxtr_core::encoder::AttentionVariant;
use voxtr_core::{OpCounter, Rng, Tensor};

pub const MIN_REPETITIONS: usize = 11;
pub const MIN_WARMUPS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WallStats {
    pub median_ms: f64,
    pub iqr_ms: f64,
    pub repetitions: usize,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    // Linear interpolation between closest ranks.
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
    }
}

/// Run `warmups` unrecorded executions, then `repetitions` recorded ones on a
/// monotonic clock.
pub fn measure(runner: &mut dyn FnMut(), repetitions: usize, warmups: usize) -> WallStats {
    assert!(repetitions >= 1);
    for _ in 0..warmups {
        runner();
    }
    let mut samples_ms = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let start = Instant::now();
        runner();
        samples_ms.push(start.elapsed().as_secs_f64() * 1e3);
    }
    samples_ms.sort_by(|a, b| a.partial_cmp(b).unwrap());
    WallStats {
        median_ms: quantile(&samples_ms, 0.5),
        iqr_ms: quantile(&samples_ms, 0.75) - quantile(&samples_ms, 0.25),
        repetitions,
    }
}

/// One benchmarked operator variant. Field names are the file contract for
/// the CSV and JSONL outputs.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CostReport {
    pub variant: String,
    #[serde(rename = "N")]
    pub n: usize,
    pub d: usize,
    pub h: usize,
    pub w: usize,
    pub r: usize,
    pub analytic_flops: u64,
    pub measured_flops: u64,
    pub peak_bytes: u64,
    pub time_ms_median: f64,
    pub time_ms_iqr: f64,
    pub speedup: f64,
}

#[derive(Debug, Clone)]
pub struct BenchSpec {
    pub n: usize,
    pub d: usize,
    pub h: usize,
    pub w: usize,
    pub r: usize,
    pub tile_rows: usize,
    pub tile_cols: usize,
    pub repetitions: usize,
    pub warmups: usize,
    pub seed: u64,
}

fn run_variant(
    variant: AttentionVariant,
    x: &Tensor,
    wts: &AttentionWeights,
    cfg: &AttentionConfig,
    ctr: &mut OpCounter,
) -> Result<Tensor> {
    Ok(match variant {
        AttentionVariant::Naive => naive_mhsa(x, wts, cfg, ctr)?,
        AttentionVariant::Flash => flash_mhsa(x, wts, cfg, ctr)?,
        AttentionVariant::SparseFlash => sparse_flash_mhsa(x, wts, cfg, ctr)?,
    })
}

/// Benchmark each variant on one shared input and weight set. Speedups are
/// wall-time ratios against the naive-dense baseline (or the first variant
/// when naive is not in the list).
pub fn compare_variants(
    variants: &[AttentionVariant],
    spec: &BenchSpec,
) -> Result<Vec<CostReport>> {
    ensure!(!variants.is_empty(), "no variants to benchmark");
    ensure!(
        spec.repetitions >= MIN_REPETITIONS && spec.warmups >= MIN_WARMUPS,
        "cost reports require >= {MIN_REPETITIONS} repetitions and >= {MIN_WARMUPS} warmups, \
         got {} and {}",
        spec.repetitions,
        spec.warmups
    );
    let mut rng = Rng::new(spec.seed);
    let x = rng.normal_tensor(&[spec.n, spec.d], 1.0);
    let wts = AttentionWeights::seeded(spec.d, &mut rng);
    let cfg = AttentionConfig::new(spec.d, spec.h)
        .with_segments(spec.w, spec.r)
        .with_tiles(spec.tile_rows, spec.tile_cols);
    cfg.validate()?;

    struct Measured {
        variant: AttentionVariant,
        flops: u64,
        peak: u64,
        wall: WallStats,
    }

    let mut measured = Vec::with_capacity(variants.len());
    for &variant in variants {
        // One instrumented run for the deterministic columns.
        let mut ctr = OpCounter::new();
        run_variant(variant, &x, &wts, &cfg, &mut ctr)?;
        // Timed runs.
        let mut failure = None;
        let mut runner = || {
            let mut scratch_ctr = OpCounter::new();
            if let Err(err) = run_variant(variant, &x, &wts, &cfg, &mut scratch_ctr) {
                failure = Some(err);
            }
        };
        let wall = measure(&mut runner, spec.repetitions, spec.warmups);
        if let Some(err) = failure {
            bail!("benchmark run failed: {err}");
        }
        measured.push(Measured {
            variant,
            flops: ctr.flops(),
            peak: ctr.peak_transient_bytes(),
            wall,
        });
    }

    let baseline_idx = variants
        .iter()
        .position(|&v| v == AttentionVariant::Naive)
        .unwrap_or(0);
    let baseline_ms = measured[baseline_idx].wall.median_ms;

    measured
        .into_iter()
        .map(|m| {
            let model = analytic_flops(&CostInputs::mhsa_only(
                m.variant, spec.n, spec.d, spec.h, spec.w, spec.r,
            ))?;
            Ok(CostReport {
                variant: m.variant.label().to_string(),
                n: spec.n,
                d: spec.d,
                h: spec.h,
                w: spec.w,
                r: spec.r,
                analytic_flops: model.total(),
                measured_flops: m.flops,
                peak_bytes: m.peak,
                time_ms_median: m.wall.median_ms,
                time_ms_iqr: m.wall.iqr_ms,
                speedup: baseline_ms / m.wall.median_ms,
            })
        })
        .collect()
}

pub const CSV_HEADER: &str =
    "variant,N,d,h,w,r,analytic_flops,measured_flops,peak_bytes,time_ms_median,time_ms_iqr,speedup";

pub fn to_csv(reports: &[CostReport]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.variant,
            r.n,
            r.d,
            r.h,
            r.w,
            r.r,
            r.analytic_flops,
            r.measured_flops,
            r.peak_bytes,
            r.time_ms_median,
            r.time_ms_iqr,
            r.speedup
        ));
    }
    out
}

pub fn from_csv(contents: &str) -> Result<Vec<CostReport>> {
    let mut lines = contents.lines();
    match lines.next() {
        Some(header) if header == CSV_HEADER => {}
        other => bail!("unexpected CSV header {other:?}"),
    }
    lines
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            ensure!(f.len() == 12, "expected 12 fields, got {}", f.len());
            Ok(CostReport {
                variant: f[0].to_string(),
                n: f[1].parse()?,
                d: f[2].parse()?,
                h: f[3].parse()?,
                w: f[4].parse()?,
                r: f[5].parse()?,
                analytic_flops: f[6].parse()?,
                measured_flops: f[7].parse()?,
                peak_bytes: f[8].parse()?,
                time_ms_median: f[9].parse()?,
                time_ms_iqr: f[10].parse()?,
                speedup: f[11].parse()?,
            })
        })
        .collect()
}

pub fn write_reports(dir: &Path, reports: &[CostReport]) -> Result<()> {
    fs::write(dir.join("reports.csv"), to_csv(reports))?;
    let mut jsonl = String::new();
    for r in reports {
        jsonl.push_str(&serde_json::to_string(r)?);
        jsonl.push('\n');
    }
    fs::write(dir.join("reports.jsonl"), jsonl)?;
    Ok(())
}

pub fn read_reports_jsonl(path: &Path) -> Result<Vec<CostReport>> {
    fs::read_to_string(path)?
        .lines()
        .map(|line| Ok(serde_json::from_str(line)?))
        .collect()
}
