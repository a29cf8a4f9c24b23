//! Independent 64-bit reference implementations and finite-difference
//! gradient checks for `voxtr-core`.
//!
//! Everything here is deliberately straight-line: triple-loop matmuls, dense
//! softmax attention, and a plain f64 re-statement of the encoder forward
//! pass. None of it shares kernels with the production crate, so agreement
//! between the two is evidence, not tautology. The production path computes
//! in f32 with `libm`; this crate computes in f64 with the standard library's
//! math (plus `libm`'s f64 `erf`, which f32 code never touches).
//!
//! The crate is a normal (non-dev) dependency of the CLI because the
//! `verify` and `gradcheck` commands run these checks at runtime; the core
//! crate consumes it only from its test suite.

mod cases;
mod fd;
mod ref64;

pub use cases::{gradcheck_case_names, run_gradcheck_case, CaseOutcome};
pub use fd::{central_diff, grad_error, GRADCHECK_STEP};
pub use ref64::{
    adam_trajectory_ref, encode_ref, gelu64, layernorm64, layerwise_loss_ref, logit_loss_ref,
    matmul64, mhsa_ref, softmax64, sparse_mhsa_ref, to_f64, RefAttnWeights,
};
