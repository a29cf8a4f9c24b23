//! The `verify` command: oracle equivalence, dense limit, partition,
//! round-trip, and order-independence suites.
//!
//! `fault` deliberately corrupts the flash accumulation so the suites can be
//! shown to fail; a healthy build runs with `Fault::None`.

use crate::report::{write_check_report, write_manifest, CheckResult, Manifest};
use anyhow::Result;
use std::path::PathBuf;
use voxtr_core::attention::{
    build_segment_plan, flash_mhsa_with_fault, gather_segments, naive_mhsa, scatter_segments,
    sparse_flash_mhsa, AttentionConfig, AttentionWeights, Fault,
};
use voxtr_core::tape::Tape;
use voxtr_core::{OpCounter, Rng, Tensor};
use voxtr_oracle as oracle;

pub struct VerifyOptions {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub trials: usize,
    pub fault: Fault,
    pub scale: String,
    pub parallelism: usize,
}

const GRID_N: [usize; 3] = [16, 64, 256];
const GRID_D: [usize; 2] = [16, 64];
const SEEDS_PER_CONFIG: u64 = 3;

fn seeded_case(n: usize, d: usize, seed: u64) -> (Tensor, AttentionWeights) {
    let mut rng = Rng::new(seed);
    let x = rng.normal_tensor(&[n, d], 1.0);
    // 1/sqrt(d) fan-in scaling keeps activations O(1) at every width.
    let std = 1.0 / (d as f32).sqrt();
    let wts = AttentionWeights::new(
        rng.normal_tensor(&[d, d], std),
        rng.normal_tensor(&[d, d], std),
        rng.normal_tensor(&[d, d], std),
        rng.normal_tensor(&[d, d], std),
    )
    .expect("square")
    .with_zero_biases();
    (x, wts)
}

fn flash_vs_naive(seed: u64, fault: Fault) -> Result<CheckResult> {
    let mut worst = 0.0f32;
    let mut configs = 0;
    for n in GRID_N {
        for d in GRID_D {
            for s in 0..SEEDS_PER_CONFIG {
                let (x, wts) = seeded_case(n, d, seed ^ (s + 1) ^ ((n as u64) << 32));
                let cfg = AttentionConfig::new(d, 4);
                let mut ctr = OpCounter::new();
                let dense = naive_mhsa(&x, &wts, &cfg, &mut ctr)?;
                let flash = flash_mhsa_with_fault(&x, &wts, &cfg, fault, &mut ctr)?;
                worst = worst.max(flash.max_abs_diff(&dense)?);
                configs += 1;
            }
        }
    }
    Ok(CheckResult::new(
        "flash_vs_naive_oracle",
        worst <= 1e-5,
        format!("max abs diff {worst:.3e} over {configs} configs (tolerance 1e-5)"),
    ))
}

fn sparse_dense_limit(seed: u64, fault: Fault) -> Result<CheckResult> {
    let mut worst = 0.0f32;
    for n in GRID_N {
        for d in GRID_D {
            let (x, wts) = seeded_case(n, d, seed ^ 0xD15E ^ (n as u64));
            let cfg = AttentionConfig::new(d, 4).with_segments(n, 1);
            let mut ctr = OpCounter::new();
            let flash = flash_mhsa_with_fault(&x, &wts, &cfg, fault, &mut ctr)?;
            let sparse = sparse_flash_mhsa(&x, &wts, &cfg, &mut ctr)?;
            worst = worst.max(sparse.max_abs_diff(&flash)?);
        }
    }
    Ok(CheckResult::new(
        "sparse_dense_limit",
        worst <= 1e-6,
        format!("max abs diff {worst:.3e} at w=N, r=1 (tolerance 1e-6)"),
    ))
}

fn partition_property(seed: u64, trials: usize) -> CheckResult {
    let mut rng = Rng::new(seed ^ 0x9A27);
    let mut violations = 0usize;
    for _ in 0..trials {
        let w = rng.next_below(16) as usize + 1;
        let r = rng.next_below(8) as usize + 1;
        let blocks = rng.next_below(16) as usize + 1;
        let n = w * r * blocks;
        match build_segment_plan(n, w, r) {
            Ok(plan) => {
                if plan.check_invariants().is_err() {
                    violations += 1;
                }
            }
            Err(_) => violations += 1,
        }
    }
    CheckResult::new(
        "segment_plan_partition",
        violations == 0,
        format!("{trials} random (N, w, r) plans, {violations} violations"),
    )
}

fn sparse_vs_segmentwise_naive(seed: u64) -> Result<CheckResult> {
    let (n, d, h, w, r) = (16, 8, 2, 4, 2);
    let mut worst = 0.0f64;
    for s in 0..SEEDS_PER_CONFIG {
        let (x, wts) = seeded_case(n, d, seed ^ 0x5EA5 ^ s);
        let cfg = AttentionConfig::new(d, h).with_segments(w, r);
        let mut ctr = OpCounter::new();
        let got = sparse_flash_mhsa(&x, &wts, &cfg, &mut ctr)?;
        let plan = build_segment_plan(n, w, r)?;
        let zero = vec![0.0f64; d];
        let ref_wts = oracle::RefAttnWeights {
            embed_dim: d,
            num_heads: h,
            wq: &oracle::to_f64(&wts.wq),
            wk: &oracle::to_f64(&wts.wk),
            wv: &oracle::to_f64(&wts.wv),
            wo: &oracle::to_f64(&wts.wo),
            bq: Some(&zero),
            bk: Some(&zero),
            bv: Some(&zero),
            bo: Some(&zero),
        };
        let expect = oracle::sparse_mhsa_ref(&oracle::to_f64(&x), n, &ref_wts, plan.segments());
        let diff = got
            .data()
            .iter()
            .zip(&expect)
            .map(|(&a, &b)| (a as f64 - b).abs())
            .fold(0.0, f64::max);
        worst = worst.max(diff);
    }
    Ok(CheckResult::new(
        "sparse_vs_segmentwise_naive",
        worst <= 1e-5,
        format!("max abs diff {worst:.3e} vs per-segment oracle (tolerance 1e-5)"),
    ))
}

fn roundtrip_checks(seed: u64) -> Result<[CheckResult; 2]> {
    let mut rng = Rng::new(seed ^ 0x2077);
    let mut roundtrip_ok = true;
    let mut order_ok = true;
    for _ in 0..32 {
        let w = rng.next_below(8) as usize + 1;
        let r = rng.next_below(4) as usize + 1;
        let blocks = rng.next_below(6) as usize + 1;
        let n = w * r * blocks;
        let d = rng.next_below(6) as usize + 1;
        let x = rng.normal_tensor(&[n, d], 1.0);
        let plan = build_segment_plan(n, w, r)?;
        let gathered = gather_segments(&x, &plan)?;
        let back = scatter_segments(&gathered, &plan)?;
        roundtrip_ok &= back == x;

        // Scatter the same segments in reverse processing order.
        let forward = back;
        let mut tape = Tape::new();
        let parts: Vec<_> = (0..plan.num_segments())
            .rev()
            .map(|s| {
                let rows = gathered.data()[s * w * d..(s + 1) * w * d].to_vec();
                tape.leaf(Tensor::from_vec(vec![w, d], rows).expect("segment shape"))
            })
            .collect();
        let indices: Vec<Vec<usize>> = plan.segments().iter().rev().cloned().collect();
        let reversed = tape.scatter_rows(&parts, &indices, n)?;
        order_ok &= tape.value(reversed) == &forward;
    }
    Ok([
        CheckResult::new(
            "gather_scatter_roundtrip",
            roundtrip_ok,
            "32 random plans, bitwise round-trip".to_string(),
        ),
        CheckResult::new(
            "scatter_order_independence",
            order_ok,
            "32 random plans, reversed segment order".to_string(),
        ),
    ])
}

pub fn run(opts: &VerifyOptions) -> Result<(Vec<CheckResult>, bool)> {
    std::fs::create_dir_all(&opts.out_dir)?;
    let mut results = vec![
        flash_vs_naive(opts.seed, opts.fault)?,
        sparse_dense_limit(opts.seed, opts.fault)?,
        partition_property(opts.seed, opts.trials),
        sparse_vs_segmentwise_naive(opts.seed)?,
    ];
    results.extend(roundtrip_checks(opts.seed)?);

    write_manifest(
        &opts.out_dir,
        &Manifest {
            command: "verify".to_string(),
            seed: opts.seed,
            scale: opts.scale.clone(),
            parallelism: opts.parallelism,
            config: serde_json::json!({
                "trials": opts.trials,
                "fault": format!("{:?}", opts.fault),
                "grid_n": GRID_N,
                "grid_d": GRID_D,
            }),
        },
    )?;
    write_check_report(&opts.out_dir.join("verify_report.json"), &results)?;
    let all_pass = results.iter().all(|r| r.passed());
    Ok((results, all_pass))
}
