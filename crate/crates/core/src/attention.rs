//! Multi-head self-attention in three interchangeable flavors.
//!
//! - [`naive_mhsa`]: materializes the full `N x N` score matrix per head.
//!   Memory-heavy by design; it is the correctness oracle the others are
//!   measured against.
//! - [`flash_mhsa`]: tiled online-softmax attention. Numerically equal to
//!   naive within float tolerance but its scratch footprint is a function of
//!   the tile sizes, not of `N`.
//! - [`sparse_flash_mhsa`]: restricts attention to dilated segments of the
//!   token sequence (`segment_size` tokens sampled every `dilation_interval`
//!   positions), runs the flash core independently per segment, and writes
//!   results back to the original token positions. QKV and output projections
//!   still see the full sequence; only the attention interaction is
//!   sparsified.
//!
//! All three share one contract: `N x d` in, `N x d` out, scale `1/sqrt(d/h)`.

use crate::counter::OpCounter;
use crate::error::{Error, Result};
use crate::ops::{self, MatView, MatViewMut};
use crate::rng::Rng;
use crate::tape::{Tape, VarId};
use crate::tensor::Tensor;
use alloc::vec;
use alloc::vec::Vec;

/// Hyperparameters for one attention operator instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionConfig {
    pub embed_dim: usize,
    pub num_heads: usize,
    /// Tokens per sparse segment (`w`). Dense behavior is `w = N, r = 1`.
    pub segment_size: usize,
    /// Sampling interval between tokens of a segment (`r`).
    pub dilation_interval: usize,
    pub tile_rows: usize,
    pub tile_cols: usize,
}

impl AttentionConfig {
    pub const DEFAULT_TILE: usize = 16;

    pub fn new(embed_dim: usize, num_heads: usize) -> Self {
        AttentionConfig {
            embed_dim,
            num_heads,
            segment_size: 1,
            dilation_interval: 1,
            tile_rows: Self::DEFAULT_TILE,
            tile_cols: Self::DEFAULT_TILE,
        }
    }

    pub fn with_segments(mut self, segment_size: usize, dilation_interval: usize) -> Self {
        self.segment_size = segment_size;
        self.dilation_interval = dilation_interval;
        self
    }

    pub fn with_tiles(mut self, tile_rows: usize, tile_cols: usize) -> Self {
        self.tile_rows = tile_rows;
        self.tile_cols = tile_cols;
        self
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }

    pub fn scale(&self) -> f32 {
        1.0 / libm::sqrtf(self.head_dim() as f32)
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0
            || self.num_heads == 0
            || !self.embed_dim.is_multiple_of(self.num_heads)
        {
            return Err(Error::InvalidConfig {
                detail: alloc::format!(
                    "embed_dim {} must be a positive multiple of num_heads {}",
                    self.embed_dim,
                    self.num_heads
                ),
            });
        }
        if self.segment_size == 0 || self.dilation_interval == 0 {
            return Err(Error::InvalidConfig {
                detail: "segment_size and dilation_interval must be >= 1".into(),
            });
        }
        if self.tile_rows == 0 || self.tile_cols == 0 {
            return Err(Error::InvalidConfig {
                detail: "tile_rows and tile_cols must be >= 1".into(),
            });
        }
        Ok(())
    }
}

/// Projection matrices for one attention operator.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
    pub bq: Option<Tensor>,
    pub bk: Option<Tensor>,
    pub bv: Option<Tensor>,
    pub bo: Option<Tensor>,
}

impl AttentionWeights {
    pub fn new(wq: Tensor, wk: Tensor, wv: Tensor, wo: Tensor) -> Result<Self> {
        let d = wq.extent(0);
        for m in [&wq, &wk, &wv, &wo] {
            if m.rank() != 2 || m.extent(0) != d || m.extent(1) != d {
                return Err(Error::InvalidConfig {
                    detail: alloc::format!(
                        "attention projections must all be square {d}x{d}, got {:?}",
                        m.shape()
                    ),
                });
            }
        }
        Ok(AttentionWeights {
            wq,
            wk,
            wv,
            wo,
            bq: None,
            bk: None,
            bv: None,
            bo: None,
        })
    }

    pub fn with_zero_biases(mut self) -> Self {
        let d = self.embed_dim();
        self.bq = Some(Tensor::zeros(&[d]));
        self.bk = Some(Tensor::zeros(&[d]));
        self.bv = Some(Tensor::zeros(&[d]));
        self.bo = Some(Tensor::zeros(&[d]));
        self
    }

    /// Truncated-normal(0.02) projections with zero biases.
    pub fn seeded(embed_dim: usize, rng: &mut Rng) -> Self {
        let shape = [embed_dim, embed_dim];
        AttentionWeights::new(
            rng.trunc_normal_tensor(&shape, 0.02),
            rng.trunc_normal_tensor(&shape, 0.02),
            rng.trunc_normal_tensor(&shape, 0.02),
            rng.trunc_normal_tensor(&shape, 0.02),
        )
        .expect("square by construction")
        .with_zero_biases()
    }

    pub fn embed_dim(&self) -> usize {
        self.wq.extent(0)
    }
}

/// Which token positions form each sparse segment.
///
/// Construction guarantees the invariants: segments are pairwise disjoint,
/// their union is exactly `0..token_count`, and consecutive indices within a
/// segment differ by exactly `dilation_interval`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentPlan {
    token_count: usize,
    segment_size: usize,
    dilation_interval: usize,
    segments: Vec<Vec<usize>>,
}

impl SegmentPlan {
    pub fn token_count(&self) -> usize {
        self.token_count
    }

    pub fn segment_size(&self) -> usize {
        self.segment_size
    }

    pub fn dilation_interval(&self) -> usize {
        self.dilation_interval
    }

    pub fn segments(&self) -> &[Vec<usize>] {
        &self.segments
    }

    pub fn num_segments(&self) -> usize {
        self.segments.len()
    }

    /// Re-check the partition invariants. Construction already enforces them;
    /// this exists so verification suites can assert them independently.
    pub fn check_invariants(&self) -> Result<()> {
        let mut seen = vec![false; self.token_count];
        for seg in &self.segments {
            if seg.len() != self.segment_size {
                return Err(Error::InvalidConfig {
                    detail: alloc::format!(
                        "segment length {} != segment_size {}",
                        seg.len(),
                        self.segment_size
                    ),
                });
            }
            for pair in seg.windows(2) {
                if pair[1] != pair[0] + self.dilation_interval {
                    return Err(Error::InvalidConfig {
                        detail: alloc::format!(
                            "indices {} -> {} are not spaced by {}",
                            pair[0],
                            pair[1],
                            self.dilation_interval
                        ),
                    });
                }
            }
            for &i in seg {
                if i >= self.token_count || seen[i] {
                    return Err(Error::InvalidConfig {
                        detail: alloc::format!("token {i} out of range or covered twice"),
                    });
                }
                seen[i] = true;
            }
        }
        if !seen.iter().all(|&s| s) {
            return Err(Error::InvalidConfig {
                detail: "segments do not cover every token".into(),
            });
        }
        Ok(())
    }
}

/// Split `0..n` into contiguous blocks of `w * r` tokens and form `r`
/// interleaved segments per block, each gathering `w` tokens spaced `r`
/// apart. The result is an exact partition: every token is attended exactly
/// once.
pub fn build_segment_plan(n: usize, w: usize, r: usize) -> Result<SegmentPlan> {
    if w == 0 || r == 0 {
        return Err(Error::InvalidConfig {
            detail: "segment_size and dilation_interval must be >= 1".into(),
        });
    }
    if n == 0 || !n.is_multiple_of(w * r) {
        return Err(Error::SegmentDivisibility { n, w, r });
    }
    let block = w * r;
    let mut segments = Vec::with_capacity(n / w);
    for base in (0..n).step_by(block) {
        for offset in 0..r {
            segments.push((0..w).map(|j| base + offset + j * r).collect());
        }
    }
    Ok(SegmentPlan {
        token_count: n,
        segment_size: w,
        dilation_interval: r,
        segments,
    })
}

/// Collect segment rows into a `num_segments x w x d` tensor.
pub fn gather_segments(x: &Tensor, plan: &SegmentPlan) -> Result<Tensor> {
    if x.rank() != 2 || x.extent(0) != plan.token_count {
        return Err(Error::BadOperand {
            op: "gather_segments",
            detail: alloc::format!(
                "input shape {:?} does not match plan over {} tokens",
                x.shape(),
                plan.token_count
            ),
        });
    }
    let d = x.extent(1);
    let mut out = Vec::with_capacity(x.numel());
    for seg in &plan.segments {
        for &i in seg {
            out.extend_from_slice(x.row(i));
        }
    }
    Tensor::from_vec(vec![plan.num_segments(), plan.segment_size, d], out)
}

/// Inverse of [`gather_segments`]: write each segment row back to its
/// absolute token position. Disjointness makes the result independent of
/// segment processing order.
pub fn scatter_segments(segments: &Tensor, plan: &SegmentPlan) -> Result<Tensor> {
    if segments.rank() != 3
        || segments.extent(0) != plan.num_segments()
        || segments.extent(1) != plan.segment_size
        || segments.extent(0) * segments.extent(1) != plan.token_count
    {
        return Err(Error::BadOperand {
            op: "scatter_segments",
            detail: alloc::format!(
                "segments shape {:?} does not match plan ({} segments of {} over {} tokens)",
                segments.shape(),
                plan.num_segments(),
                plan.segment_size,
                plan.token_count
            ),
        });
    }
    let d = segments.extent(2);
    let w = plan.segment_size;
    let mut out = vec![0.0f32; plan.token_count * d];
    let data = segments.data();
    for (s, seg) in plan.segments.iter().enumerate() {
        for (j, &row) in seg.iter().enumerate() {
            let src = &data[(s * w + j) * d..(s * w + j + 1) * d];
            out[row * d..(row + 1) * d].copy_from_slice(src);
        }
    }
    Tensor::from_vec(vec![plan.token_count, d], out)
}

/// Deliberate defect injection for the verification harness. Running the
/// equivalence suites with a fault enabled proves they can actually fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fault {
    #[default]
    None,
    /// Flip the sign of the probability-times-value accumulation inside the
    /// flash core.
    NegatePvAccumulation,
}

// ---------------------------------------------------------------------------
// Attention cores. These operate on strided per-head (and per-segment) views
// and are the only code that records attention-core flops and scratch.
// ---------------------------------------------------------------------------

/// Dense core: scores -> softmax -> weighted sum, with the full `n x n`
/// score matrix held live. Exactly `4*n^2*dh` core flops.
pub(crate) fn naive_core_forward(
    q: MatView<'_>,
    k: MatView<'_>,
    v: MatView<'_>,
    mut out: MatViewMut<'_>,
    scale: f32,
    ctr: &mut OpCounter,
) {
    let n = q.rows;
    let dh = q.cols;
    let score_bytes = (n * n * core::mem::size_of::<f32>()) as u64;
    ctr.scratch_alloc(score_bytes);
    let mut scores = vec![0.0f32; n * n];
    for i in 0..n {
        let qi = q.row(i);
        for j in 0..n {
            let kj = k.row(j);
            let mut acc = 0.0f32;
            for (x, y) in qi.iter().zip(kj) {
                acc += x * y;
            }
            scores[i * n + j] = acc * scale;
        }
    }
    ctr.add_attn_core_flops(2 * (n as u64) * (n as u64) * (dh as u64));
    // Row softmax in place.
    for row in scores.chunks_exact_mut(n) {
        let m = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f32;
        for s in row.iter_mut() {
            *s = libm::expf(*s - m);
            sum += *s;
        }
        let inv = 1.0 / sum;
        for s in row.iter_mut() {
            *s *= inv;
        }
    }
    for i in 0..n {
        let prow = &scores[i * n..(i + 1) * n];
        let orow = out.row_mut(i);
        orow.fill(0.0);
        for (j, &p) in prow.iter().enumerate() {
            let vj = v.row(j);
            for (o, &vv) in orow.iter_mut().zip(vj) {
                *o += p * vv;
            }
        }
    }
    ctr.add_attn_core_flops(2 * (n as u64) * (n as u64) * (dh as u64));
    drop(scores);
    ctr.scratch_free(score_bytes);
}

/// Tiled online-softmax core. Scratch is one score tile plus one row-tile
/// accumulator — independent of `n`. Writes per-row logsumexp into `lse`
/// when provided (the fused backward needs it).
#[allow(clippy::too_many_arguments)]
pub(crate) fn flash_core_forward(
    q: MatView<'_>,
    k: MatView<'_>,
    v: MatView<'_>,
    mut out: MatViewMut<'_>,
    scale: f32,
    tile_rows: usize,
    tile_cols: usize,
    mut lse: Option<&mut [f32]>,
    fault: Fault,
    ctr: &mut OpCounter,
) {
    let n = q.rows;
    let dh = q.cols;
    let br = tile_rows.min(n).max(1);
    let bc = tile_cols.min(n).max(1);
    let pv_sign = match fault {
        Fault::None => 1.0f32,
        Fault::NegatePvAccumulation => -1.0f32,
    };

    let scratch_bytes = ((br * bc + br * dh + 2 * br) * core::mem::size_of::<f32>()) as u64;
    ctr.scratch_alloc(scratch_bytes);
    let mut stile = vec![0.0f32; br * bc];
    let mut acc = vec![0.0f32; br * dh];
    let mut run_max = vec![f32::NEG_INFINITY; br];
    let mut run_sum = vec![0.0f32; br];

    let mut core_flops: u64 = 0;
    for i0 in (0..n).step_by(br) {
        let ib = br.min(n - i0);
        acc[..ib * dh].fill(0.0);
        run_max[..ib].fill(f32::NEG_INFINITY);
        run_sum[..ib].fill(0.0);

        for j0 in (0..n).step_by(bc) {
            let jb = bc.min(n - j0);
            // Score tile.
            for ii in 0..ib {
                let qi = q.row(i0 + ii);
                for jj in 0..jb {
                    let kj = k.row(j0 + jj);
                    let mut s = 0.0f32;
                    for (x, y) in qi.iter().zip(kj) {
                        s += x * y;
                    }
                    stile[ii * bc + jj] = s * scale;
                }
            }
            core_flops += 2 * (ib as u64) * (jb as u64) * (dh as u64);

            // Online softmax update per row.
            for ii in 0..ib {
                let srow = &stile[ii * bc..ii * bc + jb];
                let tile_max = srow.iter().copied().fold(f32::NEG_INFINITY, f32::max);
                let new_max = run_max[ii].max(tile_max);
                let corr = libm::expf(run_max[ii] - new_max);
                run_sum[ii] *= corr;
                let arow = &mut acc[ii * dh..(ii + 1) * dh];
                for a in arow.iter_mut() {
                    *a *= corr;
                }
                for (jj, &s) in srow.iter().enumerate() {
                    let p = libm::expf(s - new_max);
                    run_sum[ii] += p;
                    let vj = v.row(j0 + jj);
                    for (a, &vv) in arow.iter_mut().zip(vj) {
                        *a += pv_sign * p * vv;
                    }
                }
                run_max[ii] = new_max;
            }
            core_flops += 2 * (ib as u64) * (jb as u64) * (dh as u64);
        }

        for ii in 0..ib {
            let inv = 1.0 / run_sum[ii];
            let arow = &acc[ii * dh..(ii + 1) * dh];
            let orow = out.row_mut(i0 + ii);
            for (o, &a) in orow.iter_mut().zip(arow) {
                *o = a * inv;
            }
            if let Some(lse) = lse.as_deref_mut() {
                lse[i0 + ii] = run_max[ii] + libm::logf(run_sum[ii]);
            }
        }
    }
    ctr.add_attn_core_flops(core_flops);
    drop((stile, acc, run_max, run_sum));
    ctr.scratch_free(scratch_bytes);
}

/// Backward of the fused flash core. Recomputes probabilities tile by tile
/// from the saved logsumexp, so nothing `n x n` is ever materialized.
#[allow(clippy::too_many_arguments)]
pub(crate) fn flash_core_backward(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    out: &Tensor,
    lse: &[f32],
    grad_out: &Tensor,
    scale: f32,
    tile_rows: usize,
    tile_cols: usize,
    ctr: &mut OpCounter,
) -> Result<(Tensor, Tensor, Tensor)> {
    let n = q.extent(0);
    let dh = q.extent(1);
    let br = tile_rows.min(n).max(1);
    let bc = tile_cols.min(n).max(1);

    // row_dot[i] = <grad_out_i, out_i>, the softmax Jacobian correction.
    let row_dot: Vec<f32> = (0..n)
        .map(|i| {
            grad_out
                .row(i)
                .iter()
                .zip(out.row(i))
                .map(|(g, o)| g * o)
                .sum()
        })
        .collect();

    let mut dq = vec![0.0f32; n * dh];
    let mut dk = vec![0.0f32; n * dh];
    let mut dv = vec![0.0f32; n * dh];

    let mut flops: u64 = 0;
    for i0 in (0..n).step_by(br) {
        let ib = br.min(n - i0);
        for j0 in (0..n).step_by(bc) {
            let jb = bc.min(n - j0);
            for ii in 0..ib {
                let i = i0 + ii;
                let qi = q.row(i);
                let gi = grad_out.row(i);
                for jj in 0..jb {
                    let j = j0 + jj;
                    let kj = k.row(j);
                    let vj = v.row(j);
                    let mut s = 0.0f32;
                    for (x, y) in qi.iter().zip(kj) {
                        s += x * y;
                    }
                    let p = libm::expf(s * scale - lse[i]);
                    // dV_j += p * g_i ; dp = <g_i, v_j> ; ds = p * (dp - D_i)
                    let mut dp = 0.0f32;
                    for (g, vv) in gi.iter().zip(vj) {
                        dp += g * vv;
                    }
                    let ds = p * (dp - row_dot[i]) * scale;
                    let dv_row = &mut dv[j * dh..(j + 1) * dh];
                    for (o, &g) in dv_row.iter_mut().zip(gi) {
                        *o += p * g;
                    }
                    let dq_row = &mut dq[i * dh..(i + 1) * dh];
                    for (o, &kk) in dq_row.iter_mut().zip(kj) {
                        *o += ds * kk;
                    }
                    let dk_row = &mut dk[j * dh..(j + 1) * dh];
                    for (o, &qq) in dk_row.iter_mut().zip(qi) {
                        *o += ds * qq;
                    }
                }
            }
            flops += 2 * 5 * (ib as u64) * (jb as u64) * (dh as u64);
        }
    }
    ctr.add_flops(flops);
    Ok((
        Tensor::from_vec(vec![n, dh], dq)?,
        Tensor::from_vec(vec![n, dh], dk)?,
        Tensor::from_vec(vec![n, dh], dv)?,
    ))
}

// ---------------------------------------------------------------------------
// Raw (no-tape) operators.
// ---------------------------------------------------------------------------

fn check_input(
    op: &'static str,
    x: &Tensor,
    wts: &AttentionWeights,
    cfg: &AttentionConfig,
) -> Result<()> {
    cfg.validate()?;
    if x.rank() != 2 || x.extent(1) != cfg.embed_dim {
        return Err(Error::BadOperand {
            op,
            detail: alloc::format!(
                "expected input N x {}, got shape {:?}",
                cfg.embed_dim,
                x.shape()
            ),
        });
    }
    if wts.embed_dim() != cfg.embed_dim {
        return Err(Error::ShapeMismatch {
            op,
            left: wts.wq.shape().to_vec(),
            right: vec![cfg.embed_dim, cfg.embed_dim],
        });
    }
    Ok(())
}

fn project(x: &Tensor, w: &Tensor, b: Option<&Tensor>, ctr: &mut OpCounter) -> Result<Tensor> {
    let y = ops::matmul(x, w, ctr)?;
    match b {
        Some(bias) => ops::add_bias(&y, bias),
        None => Ok(y),
    }
}

/// Standard multi-head self-attention with the full score matrix per head.
pub fn naive_mhsa(
    x: &Tensor,
    wts: &AttentionWeights,
    cfg: &AttentionConfig,
    ctr: &mut OpCounter,
) -> Result<Tensor> {
    check_input("naive_mhsa", x, wts, cfg)?;
    let (n, d, h, dh) = (x.extent(0), cfg.embed_dim, cfg.num_heads, cfg.head_dim());
    let q = project(x, &wts.wq, wts.bq.as_ref(), ctr)?;
    let k = project(x, &wts.wk, wts.bk.as_ref(), ctr)?;
    let v = project(x, &wts.wv, wts.bv.as_ref(), ctr)?;
    let mut core = vec![0.0f32; n * d];
    for head in 0..h {
        let off = head * dh;
        let qv = MatView::new(q.data(), n, dh, d, off);
        let kv = MatView::new(k.data(), n, dh, d, off);
        let vv = MatView::new(v.data(), n, dh, d, off);
        let ov = MatViewMut::new(&mut core, n, dh, d, off);
        naive_core_forward(qv, kv, vv, ov, cfg.scale(), ctr);
    }
    let core = Tensor::from_vec(vec![n, d], core)?;
    project(&core, &wts.wo, wts.bo.as_ref(), ctr)
}

/// Exact attention via the tiled online-softmax core; never materializes an
/// `N x N` buffer.
pub fn flash_mhsa(
    x: &Tensor,
    wts: &AttentionWeights,
    cfg: &AttentionConfig,
    ctr: &mut OpCounter,
) -> Result<Tensor> {
    flash_mhsa_with_fault(x, wts, cfg, Fault::None, ctr)
}

/// [`flash_mhsa`] with an optional injected defect; see [`Fault`].
pub fn flash_mhsa_with_fault(
    x: &Tensor,
    wts: &AttentionWeights,
    cfg: &AttentionConfig,
    fault: Fault,
    ctr: &mut OpCounter,
) -> Result<Tensor> {
    check_input("flash_mhsa", x, wts, cfg)?;
    let (n, d, h, dh) = (x.extent(0), cfg.embed_dim, cfg.num_heads, cfg.head_dim());
    let q = project(x, &wts.wq, wts.bq.as_ref(), ctr)?;
    let k = project(x, &wts.wk, wts.bk.as_ref(), ctr)?;
    let v = project(x, &wts.wv, wts.bv.as_ref(), ctr)?;
    let mut core = vec![0.0f32; n * d];
    for head in 0..h {
        let off = head * dh;
        let qv = MatView::new(q.data(), n, dh, d, off);
        let kv = MatView::new(k.data(), n, dh, d, off);
        let vv = MatView::new(v.data(), n, dh, d, off);
        let ov = MatViewMut::new(&mut core, n, dh, d, off);
        flash_core_forward(
            qv,
            kv,
            vv,
            ov,
            cfg.scale(),
            cfg.tile_rows,
            cfg.tile_cols,
            None,
            fault,
            ctr,
        );
    }
    let core = Tensor::from_vec(vec![n, d], core)?;
    project(&core, &wts.wo, wts.bo.as_ref(), ctr)
}

/// Segmented attention: project the full sequence once, run the flash core
/// independently inside every dilated segment, write each result back to its
/// original token positions, then apply the output projection.
///
/// Functionally this equals `scatter ∘ (flash per segment) ∘ gather`; the
/// implementation walks segment rows through strided views instead of
/// copying, which is why its scratch is tile-sized. Core flops are exactly
/// `4*N*w*d` — the dense `4*N^2*d` scaled by `w/N`.
pub fn sparse_flash_mhsa(
    x: &Tensor,
    wts: &AttentionWeights,
    cfg: &AttentionConfig,
    ctr: &mut OpCounter,
) -> Result<Tensor> {
    check_input("sparse_flash_mhsa", x, wts, cfg)?;
    let (n, d, h, dh) = (x.extent(0), cfg.embed_dim, cfg.num_heads, cfg.head_dim());
    let plan = build_segment_plan(n, cfg.segment_size, cfg.dilation_interval)?;
    let q = project(x, &wts.wq, wts.bq.as_ref(), ctr)?;
    let k = project(x, &wts.wk, wts.bk.as_ref(), ctr)?;
    let v = project(x, &wts.wv, wts.bv.as_ref(), ctr)?;
    let w = plan.segment_size();
    let stride = plan.dilation_interval() * d;
    let mut core = vec![0.0f32; n * d];
    for seg in plan.segments() {
        let base = seg[0] * d;
        for head in 0..h {
            let off = base + head * dh;
            let qv = MatView::new(q.data(), w, dh, stride, off);
            let kv = MatView::new(k.data(), w, dh, stride, off);
            let vv = MatView::new(v.data(), w, dh, stride, off);
            let ov = MatViewMut::new(&mut core, w, dh, stride, off);
            flash_core_forward(
                qv,
                kv,
                vv,
                ov,
                cfg.scale(),
                cfg.tile_rows,
                cfg.tile_cols,
                None,
                Fault::None,
                ctr,
            );
        }
    }
    let core = Tensor::from_vec(vec![n, d], core)?;
    project(&core, &wts.wo, wts.bo.as_ref(), ctr)
}

// ---------------------------------------------------------------------------
// Taped operators for training and gradient checks.
// ---------------------------------------------------------------------------

/// Tape handles for one operator's weights.
#[derive(Debug, Clone, Copy)]
pub struct AttentionWeightVars {
    pub wq: VarId,
    pub wk: VarId,
    pub wv: VarId,
    pub wo: VarId,
    pub bq: Option<VarId>,
    pub bk: Option<VarId>,
    pub bv: Option<VarId>,
    pub bo: Option<VarId>,
}

impl AttentionWeightVars {
    /// Register every weight tensor as a differentiable tape leaf.
    pub fn register(tape: &mut Tape, wts: &AttentionWeights) -> Self {
        AttentionWeightVars {
            wq: tape.param(wts.wq.clone()),
            wk: tape.param(wts.wk.clone()),
            wv: tape.param(wts.wv.clone()),
            wo: tape.param(wts.wo.clone()),
            bq: wts.bq.as_ref().map(|b| tape.param(b.clone())),
            bk: wts.bk.as_ref().map(|b| tape.param(b.clone())),
            bv: wts.bv.as_ref().map(|b| tape.param(b.clone())),
            bo: wts.bo.as_ref().map(|b| tape.param(b.clone())),
        }
    }

    /// All registered ids in a fixed order (matrices, then present biases).
    pub fn ids(&self) -> Vec<VarId> {
        let mut ids = vec![self.wq, self.wk, self.wv, self.wo];
        ids.extend([self.bq, self.bk, self.bv, self.bo].into_iter().flatten());
        ids
    }
}

fn project_tape(tape: &mut Tape, x: VarId, w: VarId, b: Option<VarId>) -> Result<VarId> {
    let y = tape.matmul(x, w)?;
    match b {
        Some(bias) => tape.add_bias(y, bias),
        None => Ok(y),
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum TapeCore {
    Naive,
    Flash,
}

fn mhsa_tape_dense(
    tape: &mut Tape,
    x: VarId,
    wv: &AttentionWeightVars,
    cfg: &AttentionConfig,
    core: TapeCore,
) -> Result<VarId> {
    cfg.validate()?;
    let (h, dh) = (cfg.num_heads, cfg.head_dim());
    let q = project_tape(tape, x, wv.wq, wv.bq)?;
    let k = project_tape(tape, x, wv.wk, wv.bk)?;
    let v = project_tape(tape, x, wv.wv, wv.bv)?;
    let mut heads = Vec::with_capacity(h);
    for head in 0..h {
        let qh = tape.slice_cols(q, head * dh, dh)?;
        let kh = tape.slice_cols(k, head * dh, dh)?;
        let vh = tape.slice_cols(v, head * dh, dh)?;
        let oh = match core {
            TapeCore::Naive => {
                let scores = tape.matmul_nt(qh, kh)?;
                let scaled = tape.scale(scores, cfg.scale());
                let probs = tape.softmax_lastdim(scaled);
                tape.matmul(probs, vh)?
            }
            TapeCore::Flash => {
                tape.flash_core(qh, kh, vh, cfg.scale(), cfg.tile_rows, cfg.tile_cols)?
            }
        };
        heads.push(oh);
    }
    let merged = tape.concat_cols(&heads)?;
    project_tape(tape, merged, wv.wo, wv.bo)
}

/// Differentiable [`naive_mhsa`], composed from tape primitives.
pub fn naive_mhsa_tape(
    tape: &mut Tape,
    x: VarId,
    wv: &AttentionWeightVars,
    cfg: &AttentionConfig,
) -> Result<VarId> {
    mhsa_tape_dense(tape, x, wv, cfg, TapeCore::Naive)
}

/// Differentiable [`flash_mhsa`] built on the fused flash-core tape op.
pub fn flash_mhsa_tape(
    tape: &mut Tape,
    x: VarId,
    wv: &AttentionWeightVars,
    cfg: &AttentionConfig,
) -> Result<VarId> {
    mhsa_tape_dense(tape, x, wv, cfg, TapeCore::Flash)
}

/// Differentiable [`sparse_flash_mhsa`]: gather each segment's projected
/// rows, run the fused flash core per segment and head, scatter the results
/// back, then project.
pub fn sparse_flash_mhsa_tape(
    tape: &mut Tape,
    x: VarId,
    wv: &AttentionWeightVars,
    cfg: &AttentionConfig,
) -> Result<VarId> {
    cfg.validate()?;
    let n = tape.value(x).extent(0);
    let plan = build_segment_plan(n, cfg.segment_size, cfg.dilation_interval)?;
    let (h, dh) = (cfg.num_heads, cfg.head_dim());
    let q = project_tape(tape, x, wv.wq, wv.bq)?;
    let k = project_tape(tape, x, wv.wk, wv.bk)?;
    let v = project_tape(tape, x, wv.wv, wv.bv)?;
    let mut parts = Vec::with_capacity(plan.num_segments());
    for seg in plan.segments() {
        let qs = tape.gather_rows(q, seg)?;
        let ks = tape.gather_rows(k, seg)?;
        let vs = tape.gather_rows(v, seg)?;
        let mut heads = Vec::with_capacity(h);
        for head in 0..h {
            let qh = tape.slice_cols(qs, head * dh, dh)?;
            let kh = tape.slice_cols(ks, head * dh, dh)?;
            let vh = tape.slice_cols(vs, head * dh, dh)?;
            heads.push(tape.flash_core(qh, kh, vh, cfg.scale(), cfg.tile_rows, cfg.tile_cols)?);
        }
        parts.push(tape.concat_cols(&heads)?);
    }
    let indices: Vec<Vec<usize>> = plan.segments().to_vec();
    let merged = tape.scatter_rows(&parts, &indices, n)?;
    project_tape(tape, merged, wv.wo, wv.bo)
}
