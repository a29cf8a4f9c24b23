//! Finite-difference verification of every differentiable operation.
//!
//! Analytic tape gradients are compared against central differences of the
//! independent f64 references in `voxtr-oracle`, on three seeded shapes per
//! operation, at the 1e-3 bar.

use voxtr_oracle::{gradcheck_case_names, run_gradcheck_case};

const THRESHOLD: f64 = 1e-3;
const SEEDS: [u64; 3] = [1, 2, 3];

#[test]
fn every_operation_passes_gradcheck_on_three_seeds() {
    let mut failures = Vec::new();
    for name in gradcheck_case_names() {
        for seed in SEEDS {
            let outcome = run_gradcheck_case(name, seed).unwrap();
            assert!(outcome.elements_checked > 0);
            if outcome.max_error > THRESHOLD {
                failures.push(format!(
                    "{name} (seed {seed}): max rel err {:.3e}",
                    outcome.max_error
                ));
            }
        }
    }
    assert!(
        failures.is_empty(),
        "gradcheck failures:\n{}",
        failures.join("\n")
    );
}

#[test]
fn registry_covers_the_operator_set() {
    let names = gradcheck_case_names();
    assert!(
        names.len() >= 8,
        "need at least 8 checked ops, have {}",
        names.len()
    );
    for required in [
        "matmul",
        "softmax_lastdim",
        "layernorm",
        "gelu",
        "flash_core",
        "naive_mhsa",
        "flash_mhsa",
        "sparse_flash_mhsa",
        "layerwise_loss_2block_encoder",
    ] {
        assert!(names.contains(&required), "missing case {required}");
    }
}
