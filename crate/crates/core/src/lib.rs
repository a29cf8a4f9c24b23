//! Tensor math, attention operators, 3D ViT encoders, and layer-wise
//! distillation with exact operation accounting.
//!
//! The crate is `no_std` + `alloc`: everything here is pure computation over
//! heap buffers, so it can run anywhere an allocator exists. Float math goes
//! through [`libm`] for bit-identical results across platforms. Wall-clock
//! timing, file formats, and the command-line driver live in the companion
//! `voxtr` crate.
//!
//! Layout:
//! - [`tensor`]: dense row-major f32 tensors and the seeded [`rng::Rng`].
//! - [`ops`]: raw forward kernels (matmul family, softmax, layernorm, gelu)
//!   instrumented through [`counter::OpCounter`].
//! - [`tape`]: reverse-mode autodiff over a recorded operation tape.
//! - [`attention`]: naive, flash (tiled online-softmax), and sparse flash
//!   multi-head self-attention with identical contracts.
//! - [`encoder`]: 3D volume patch embedding and pre-norm transformer stacks.
//! - [`distill`]: layer-wise progressive distillation plus the logit phase,
//!   trained with Adam on synthetic volumes.
//! - [`cost`]: the analytic FLOP model the counters are validated against.

#![cfg_attr(not(any(test, feature = "std")), no_std)]

extern crate alloc;

pub mod attention;
pub mod cost;
pub mod counter;
pub mod distill;
pub mod encoder;
pub mod error;
pub mod ops;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use counter::OpCounter;
pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::Tensor;

#[cfg(feature = "std")]
extern crate std;
