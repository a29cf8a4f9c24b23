//! Property tests for segmentation, softmax stability, round-trips, and the
//! sparse/dense cost law.

use proptest::prelude::*;
use voxtr_core::attention::{
    build_segment_plan, flash_mhsa, gather_segments, naive_mhsa, scatter_segments,
    sparse_flash_mhsa, AttentionConfig, AttentionWeights,
};
use voxtr_core::cost::{analytic_flops, CostInputs};
use voxtr_core::encoder::AttentionVariant;
use voxtr_core::ops;
use voxtr_core::{OpCounter, Rng, Tensor};

fn plan_dims() -> impl Strategy<Value = (usize, usize, usize)> {
    // (w, r, blocks) -> n = w * r * blocks
    (1usize..=8, 1usize..=4, 1usize..=8)
}

proptest! {
    #[test]
    fn segment_plans_partition_the_sequence((w, r, blocks) in plan_dims()) {
        let n = w * r * blocks;
        let plan = build_segment_plan(n, w, r).unwrap();
        plan.check_invariants().unwrap();
        prop_assert_eq!(plan.num_segments(), n / w);
        // Spot-check the stride from the raw indices too.
        for seg in plan.segments() {
            for pair in seg.windows(2) {
                prop_assert_eq!(pair[1] - pair[0], r);
            }
        }
    }

    #[test]
    fn indivisible_counts_are_rejected((w, r, blocks) in plan_dims(), extra in 1usize..4) {
        let n = w * r * blocks + extra;
        if n % (w * r) != 0 {
            prop_assert!(build_segment_plan(n, w, r).is_err());
        }
    }

    #[test]
    fn softmax_rows_sum_to_one_up_to_80(values in prop::collection::vec(-80.0f32..80.0, 1..40)) {
        let len = values.len();
        let x = Tensor::from_vec(vec![len], values).unwrap();
        let out = ops::softmax_lastdim(&x);
        let sum: f32 = out.data().iter().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-6, "sum {}", sum);
        prop_assert!(out.data().iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn gather_scatter_roundtrip_is_bitwise((w, r, blocks) in plan_dims(), d in 1usize..6, seed in 0u64..1000) {
        let n = w * r * blocks;
        let plan = build_segment_plan(n, w, r).unwrap();
        let x = Rng::new(seed).normal_tensor(&[n, d], 1.0);
        let segments = gather_segments(&x, &plan).unwrap();
        let back = scatter_segments(&segments, &plan).unwrap();
        prop_assert_eq!(back, x);
    }

    #[test]
    fn flash_equals_naive_on_random_small_shapes(
        n in 1usize..24,
        head_dim in 2usize..6,
        heads in 1usize..4,
        seed in 0u64..1000,
        tiles in 1usize..8,
    ) {
        let d = head_dim * heads;
        let mut rng = Rng::new(seed);
        let x = rng.normal_tensor(&[n, d], 1.0);
        let wts = AttentionWeights::new(
            rng.normal_tensor(&[d, d], 0.3),
            rng.normal_tensor(&[d, d], 0.3),
            rng.normal_tensor(&[d, d], 0.3),
            rng.normal_tensor(&[d, d], 0.3),
        ).unwrap();
        let cfg = AttentionConfig::new(d, heads).with_tiles(tiles, tiles);
        let mut ctr = OpCounter::new();
        let dense = naive_mhsa(&x, &wts, &cfg, &mut ctr).unwrap();
        let flash = flash_mhsa(&x, &wts, &cfg, &mut ctr).unwrap();
        prop_assert!(flash.max_abs_diff(&dense).unwrap() <= 1e-5);
    }

    #[test]
    fn cost_law_holds_for_every_valid_config(
        (w, r, blocks) in plan_dims(),
        head_dim in 1usize..5,
        heads in 1usize..4,
    ) {
        let n = w * r * blocks;
        let d = head_dim * heads;
        let dense = analytic_flops(&CostInputs::mhsa_only(AttentionVariant::Naive, n, d, heads, 1, 1)).unwrap();
        let sparse = analytic_flops(&CostInputs::mhsa_only(AttentionVariant::SparseFlash, n, d, heads, w, r)).unwrap();
        // sparse/dense == w/n exactly.
        prop_assert_eq!(sparse.attn_core * n as u64, dense.attn_core * w as u64);

        // The instrumented counter agrees with the model.
        let mut rng = Rng::new(w as u64 ^ (r as u64) << 8);
        let x = rng.normal_tensor(&[n, d], 1.0);
        let wts = AttentionWeights::seeded(d, &mut rng);
        let cfg = AttentionConfig::new(d, heads).with_segments(w, r);
        let mut ctr = OpCounter::new();
        sparse_flash_mhsa(&x, &wts, &cfg, &mut ctr).unwrap();
        prop_assert_eq!(ctr.attn_core_flops(), sparse.attn_core);
    }

    #[test]
    fn scatter_is_independent_of_segment_order(
        (w, r, blocks) in plan_dims(),
        seed in 0u64..1000,
    ) {
        let n = w * r * blocks;
        let d = 3;
        let plan = build_segment_plan(n, w, r).unwrap();
        let x = Rng::new(seed).normal_tensor(&[n, d], 1.0);
        let gathered = gather_segments(&x, &plan).unwrap();
        let forward = scatter_segments(&gathered, &plan).unwrap();

        // Process the segments back-to-front through the tape's scatter.
        let mut tape = voxtr_core::tape::Tape::new();
        let parts: Vec<_> = (0..plan.num_segments()).rev().map(|s| {
            let rows: Vec<f32> = gathered.data()[s * w * d..(s + 1) * w * d].to_vec();
            tape.leaf(Tensor::from_vec(vec![w, d], rows).unwrap())
        }).collect();
        let indices: Vec<Vec<usize>> = plan.segments().iter().rev().cloned().collect();
        let reversed = tape.scatter_rows(&parts, &indices, n).unwrap();
        prop_assert_eq!(tape.value(reversed), &forward);
    }
}
