//! The `gradcheck` command: run every registered finite-difference case and
//! report the worst relative error per operation.

use crate::report::{write_check_report, write_manifest, CheckResult, Manifest};
use anyhow::Result;
use std::path::PathBuf;
use voxtr_oracle::{gradcheck_case_names, run_gradcheck_case};

pub struct GradcheckOptions {
    pub seed: u64,
    pub threshold: f64,
    pub out_dir: PathBuf,
    pub scale: String,
    pub parallelism: usize,
}

const SEEDS_PER_CASE: u64 = 3;

pub fn run(opts: &GradcheckOptions) -> Result<(Vec<CheckResult>, bool)> {
    std::fs::create_dir_all(&opts.out_dir)?;
    let mut results = Vec::new();
    for name in gradcheck_case_names() {
        let mut max_error = 0.0f64;
        let mut elements = 0usize;
        for s in 0..SEEDS_PER_CASE {
            let outcome = run_gradcheck_case(name, opts.seed.wrapping_add(s))?;
            max_error = max_error.max(outcome.max_error);
            elements += outcome.elements_checked;
        }
        results.push(CheckResult::new(
            name,
            max_error <= opts.threshold,
            format!(
                "max rel err {max_error:.3e} over {SEEDS_PER_CASE} seeds, \
                 {elements} gradient elements (threshold {:e})",
                opts.threshold
            ),
        ));
    }

    write_manifest(
        &opts.out_dir,
        &Manifest {
            command: "gradcheck".to_string(),
            seed: opts.seed,
            scale: opts.scale.clone(),
            parallelism: opts.parallelism,
            config: serde_json::json!({
                "threshold": opts.threshold,
                "seeds_per_case": SEEDS_PER_CASE,
                "cases": gradcheck_case_names(),
            }),
        },
    )?;
    write_check_report(&opts.out_dir.join("gradcheck_report.json"), &results)?;
    let all_pass = results.iter().all(|r| r.passed());
    Ok((results, all_pass))
}
