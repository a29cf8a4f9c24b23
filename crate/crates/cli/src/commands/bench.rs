//! The `bench` command: sweep token counts, benchmark the requested attention
//! variants at each, and emit the cost reports as CSV and JSONL.

use crate::bench::{compare_variants, write_reports, BenchSpec, CostReport};
use crate::report::{write_manifest, Manifest};
use anyhow::{ensure, Result};
use std::path::PathBuf;
use voxtr_core::encoder::AttentionVariant;

pub struct BenchCmdOptions {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub scale: String,
    pub sweep: Vec<usize>,
    pub d: usize,
    pub h: usize,
    pub w: Option<usize>,
    pub r: usize,
    pub tiles: (usize, usize),
    pub variants: Vec<AttentionVariant>,
    pub repetitions: usize,
    pub warmups: usize,
    pub parallelism: usize,
}

pub fn run(opts: &BenchCmdOptions) -> Result<Vec<CostReport>> {
    ensure!(
        !opts.sweep.is_empty(),
        "empty sweep: provide at least one N"
    );
    std::fs::create_dir_all(&opts.out_dir)?;
    let mut reports = Vec::new();
    for &n in &opts.sweep {
        // Default segment size: N/8 so the sparse core is an exact 8x saving.
        let w = opts.w.unwrap_or((n / 8).max(1));
        ensure!(
            n % (w * opts.r) == 0,
            "invalid sweep spec: N={n} is not divisible by w*r = {w}*{r} = {}",
            w * opts.r,
            r = opts.r,
        );
        let spec = BenchSpec {
            n,
            d: opts.d,
            h: opts.h,
            w,
            r: opts.r,
            tile_rows: opts.tiles.0,
            tile_cols: opts.tiles.1,
            repetitions: opts.repetitions,
            warmups: opts.warmups,
            seed: opts.seed ^ (n as u64),
        };
        reports.extend(compare_variants(&opts.variants, &spec)?);
    }

    write_manifest(
        &opts.out_dir,
        &Manifest {
            command: "bench".to_string(),
            seed: opts.seed,
            scale: opts.scale.clone(),
            parallelism: opts.parallelism,
            config: serde_json::json!({
                "sweep": opts.sweep,
                "d": opts.d,
                "h": opts.h,
                "w": opts.w,
                "r": opts.r,
                "tiles": [opts.tiles.0, opts.tiles.1],
                "variants": opts.variants.iter().map(|v| v.label()).collect::<Vec<_>>(),
                "repetitions": opts.repetitions,
                "warmups": opts.warmups,
            }),
        },
    )?;
    write_reports(&opts.out_dir, &reports)?;
    Ok(reports)
}

/// Fixed-width table for terminal output.
pub fn render_table(reports: &[CostReport]) -> String {
    let mut out = format!(
        "{:<12} {:>6} {:>4} {:>3} {:>5} {:>3} {:>16} {:>16} {:>12} {:>12} {:>10} {:>8}\n",
        "variant",
        "N",
        "d",
        "h",
        "w",
        "r",
        "analytic_flops",
        "measured_flops",
        "peak_bytes",
        "median_ms",
        "iqr_ms",
        "speedup"
    );
    for r in reports {
        out.push_str(&format!(
            "{:<12} {:>6} {:>4} {:>3} {:>5} {:>3} {:>16} {:>16} {:>12} {:>12.3} {:>10.3} {:>8.2}\n",
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
