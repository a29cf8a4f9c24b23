//! Error type shared by every fallible operation in the crate.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

/// Rejected-input and runtime failures.
///
/// Every variant carries enough context to name the offending quantity in a
/// diagnostic; none of them allocate on the happy path.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Tensor construction with `product(shape) != data.len()`.
    ShapeDataMismatch { shape: Vec<usize>, data_len: usize },
    /// A tensor extent of zero.
    ZeroExtent { shape: Vec<usize> },
    /// Two shapes that an operation requires to agree do not.
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    /// An operation received a tensor of the wrong rank or extent.
    BadOperand { op: &'static str, detail: String },
    /// Attention/encoder configuration that violates its invariants.
    InvalidConfig { detail: String },
    /// Sparse segmentation requires `N mod (w * r) == 0`.
    SegmentDivisibility { n: usize, w: usize, r: usize },
    /// Volume extents must be divisible by the patch size.
    PatchDivisibility { extent: usize, patch: usize },
    /// `backward` was asked to differentiate a non-scalar node.
    NonScalarLoss { shape: Vec<usize> },
    /// A training iteration produced a non-finite loss.
    NonFiniteLoss { iteration: usize },
    /// Iteration index outside `1..=total`.
    IterationOutOfRange { current: usize, total: usize },
    /// Unknown label where a fixed vocabulary was expected.
    UnknownLabel { what: &'static str, got: String },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeDataMismatch { shape, data_len } => write!(
                f,
                "shape {shape:?} implies {} elements, buffer holds {data_len}",
                shape.iter().product::<usize>()
            ),
            Error::ZeroExtent { shape } => {
                write!(f, "all extents must be >= 1, got shape {shape:?}")
            }
            Error::ShapeMismatch { op, left, right } => {
                write!(f, "{op}: shape mismatch {left:?} vs {right:?}")
            }
            Error::BadOperand { op, detail } => write!(f, "{op}: {detail}"),
            Error::InvalidConfig { detail } => write!(f, "invalid config: {detail}"),
            Error::SegmentDivisibility { n, w, r } => write!(
                f,
                "token count N={n} is not divisible by segment_size*dilation_interval \
                 = {w}*{r} = {}",
                w * r
            ),
            Error::PatchDivisibility { extent, patch } => {
                write!(
                    f,
                    "volume extent {extent} is not divisible by patch size {patch}"
                )
            }
            Error::NonScalarLoss { shape } => {
                write!(f, "backward requires a scalar loss, got shape {shape:?}")
            }
            Error::NonFiniteLoss { iteration } => {
                write!(f, "non-finite loss at iteration {iteration}")
            }
            Error::IterationOutOfRange { current, total } => {
                write!(f, "iteration {current} outside 1..={total}")
            }
            Error::UnknownLabel { what, got } => write!(f, "unknown {what}: {got:?}"),
        }
    }
}

impl core::error::Error for Error {}
