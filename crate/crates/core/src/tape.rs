//! Reverse-mode automatic differentiation over a recorded tape.
//!
//! Every differentiable operation appends one node holding its output tensor
//! and a record of its inputs. [`Tape::backward`] replays the records in
//! exact reverse execution order, accumulating gradients into per-node slots,
//! and returns a map from leaf id to gradient for every leaf that was created
//! with `requires_grad`. Accumulation order is fixed, so gradients are
//! bit-identical across runs.
//!
//! The tape is single-context: one forward pass, one backward pass, then drop
//! it. Counted flops go through the tape's own [`OpCounter`].

use crate::attention::{flash_core_backward, flash_core_forward};
use crate::counter::OpCounter;
use crate::error::{Error, Result};
use crate::ops;
use crate::tensor::Tensor;
use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct VarId(usize);

impl VarId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Gradients keyed by leaf id. BTreeMap keeps iteration deterministic.
pub type GradMap = BTreeMap<VarId, Tensor>;

enum Record {
    Leaf {
        requires_grad: bool,
    },
    Matmul {
        a: VarId,
        b: VarId,
    },
    MatmulNt {
        a: VarId,
        b: VarId,
    },
    Add {
        a: VarId,
        b: VarId,
    },
    Sub {
        a: VarId,
        b: VarId,
    },
    Mul {
        a: VarId,
        b: VarId,
    },
    Scale {
        x: VarId,
        c: f32,
    },
    AddBias {
        x: VarId,
        bias: VarId,
    },
    Gelu {
        x: VarId,
    },
    SoftmaxLastDim {
        x: VarId,
    },
    LayerNorm {
        x: VarId,
        gamma: VarId,
        beta: VarId,
        eps: f32,
    },
    Sum {
        x: VarId,
    },
    SumSq {
        x: VarId,
    },
    Sqrt {
        x: VarId,
    },
    GatherRows {
        x: VarId,
        indices: Vec<usize>,
    },
    ScatterRows {
        parts: Vec<VarId>,
        indices: Vec<Vec<usize>>,
    },
    SliceCols {
        x: VarId,
        start: usize,
        len: usize,
    },
    ConcatCols {
        parts: Vec<VarId>,
    },
    /// Fused tiled attention core; `lse` is the per-row logsumexp saved by the
    /// forward so the backward can regenerate probabilities tile by tile.
    FlashCore {
        q: VarId,
        k: VarId,
        v: VarId,
        scale: f32,
        tile_rows: usize,
        tile_cols: usize,
        lse: Vec<f32>,
    },
}

struct Node {
    value: Tensor,
    record: Record,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    pub counter: OpCounter,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Value of a recorded node.
    pub fn value(&self, id: VarId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, record: Record) -> VarId {
        self.nodes.push(Node { value, record });
        VarId(self.nodes.len() - 1)
    }

    // Node values and the counter live in the same struct; temporarily moving
    // the counter out lets kernels read values while counting.
    fn with_counter<T>(&mut self, f: impl FnOnce(&Self, &mut OpCounter) -> T) -> T {
        let mut ctr = core::mem::take(&mut self.counter);
        let out = f(self, &mut ctr);
        self.counter = ctr;
        out
    }

    /// Record an input tensor. Its `requires_grad` flag decides whether
    /// `backward` reports a gradient for it.
    pub fn leaf(&mut self, t: Tensor) -> VarId {
        let requires_grad = t.requires_grad();
        self.push(t, Record::Leaf { requires_grad })
    }

    /// Leaf that participates in gradients regardless of the tensor flag.
    pub fn param(&mut self, t: Tensor) -> VarId {
        self.push(
            t,
            Record::Leaf {
                requires_grad: true,
            },
        )
    }

    /// Leaf that never receives a gradient (e.g. frozen teacher outputs).
    pub fn constant(&mut self, t: Tensor) -> VarId {
        self.push(
            t,
            Record::Leaf {
                requires_grad: false,
            },
        )
    }

    pub fn matmul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let value = self.with_counter(|s, c| ops::matmul(s.value(a), s.value(b), c))?;
        Ok(self.push(value, Record::Matmul { a, b }))
    }

    /// `a * b^T` with `b` stored row-major `n x p`.
    pub fn matmul_nt(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let value = self.with_counter(|s, c| ops::matmul_nt(s.value(a), s.value(b), c))?;
        Ok(self.push(value, Record::MatmulNt { a, b }))
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let value = ops::add(self.value(a), self.value(b))?;
        Ok(self.push(value, Record::Add { a, b }))
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let value = ops::sub(self.value(a), self.value(b))?;
        Ok(self.push(value, Record::Sub { a, b }))
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let value = ops::mul(self.value(a), self.value(b))?;
        Ok(self.push(value, Record::Mul { a, b }))
    }

    pub fn scale(&mut self, x: VarId, c: f32) -> VarId {
        let value = ops::scale(self.value(x), c);
        self.push(value, Record::Scale { x, c })
    }

    pub fn add_bias(&mut self, x: VarId, bias: VarId) -> Result<VarId> {
        let value = ops::add_bias(self.value(x), self.value(bias))?;
        Ok(self.push(value, Record::AddBias { x, bias }))
    }

    pub fn gelu(&mut self, x: VarId) -> VarId {
        let value = ops::gelu(self.value(x));
        self.push(value, Record::Gelu { x })
    }

    pub fn softmax_lastdim(&mut self, x: VarId) -> VarId {
        let value = ops::softmax_lastdim(self.value(x));
        self.push(value, Record::SoftmaxLastDim { x })
    }

    pub fn layernorm(&mut self, x: VarId, gamma: VarId, beta: VarId, eps: f32) -> Result<VarId> {
        let value = ops::layernorm(self.value(x), self.value(gamma), self.value(beta), eps)?;
        Ok(self.push(
            value,
            Record::LayerNorm {
                x,
                gamma,
                beta,
                eps,
            },
        ))
    }

    pub fn sum(&mut self, x: VarId) -> VarId {
        let value = ops::sum(self.value(x));
        self.push(value, Record::Sum { x })
    }

    pub fn sumsq(&mut self, x: VarId) -> VarId {
        let value = ops::sumsq(self.value(x));
        self.push(value, Record::SumSq { x })
    }

    pub fn sqrt(&mut self, x: VarId) -> VarId {
        let value = ops::sqrt_elem(self.value(x));
        self.push(value, Record::Sqrt { x })
    }

    pub fn gather_rows(&mut self, x: VarId, indices: &[usize]) -> Result<VarId> {
        let value = ops::gather_rows(self.value(x), indices)?;
        Ok(self.push(
            value,
            Record::GatherRows {
                x,
                indices: indices.to_vec(),
            },
        ))
    }

    /// Write each part's rows to the listed absolute row indices. Index lists
    /// must be pairwise disjoint and cover `0..n_rows` exactly once.
    pub fn scatter_rows(
        &mut self,
        parts: &[VarId],
        indices: &[Vec<usize>],
        n_rows: usize,
    ) -> Result<VarId> {
        if parts.is_empty() || parts.len() != indices.len() {
            return Err(Error::BadOperand {
                op: "scatter_rows",
                detail: alloc::format!("{} parts vs {} index lists", parts.len(), indices.len()),
            });
        }
        let d = self.value(parts[0]).extent(1);
        let mut out = vec![f32::NAN; n_rows * d];
        let mut written = vec![false; n_rows];
        for (&p, idx) in parts.iter().zip(indices) {
            let part = self.value(p);
            if part.rank() != 2 || part.extent(0) != idx.len() || part.extent(1) != d {
                return Err(Error::BadOperand {
                    op: "scatter_rows",
                    detail: alloc::format!(
                        "part shape {:?} does not match {} indices x {d} cols",
                        part.shape(),
                        idx.len()
                    ),
                });
            }
            for (j, &row) in idx.iter().enumerate() {
                if row >= n_rows || written[row] {
                    return Err(Error::BadOperand {
                        op: "scatter_rows",
                        detail: alloc::format!("row {row} out of bounds or written twice"),
                    });
                }
                written[row] = true;
                out[row * d..(row + 1) * d].copy_from_slice(part.row(j));
            }
        }
        if !written.iter().all(|&w| w) {
            return Err(Error::BadOperand {
                op: "scatter_rows",
                detail: "scatter does not cover every output row".into(),
            });
        }
        let value = Tensor::from_vec(vec![n_rows, d], out)?;
        Ok(self.push(
            value,
            Record::ScatterRows {
                parts: parts.to_vec(),
                indices: indices.to_vec(),
            },
        ))
    }

    pub fn slice_cols(&mut self, x: VarId, start: usize, len: usize) -> Result<VarId> {
        let xv = self.value(x);
        if xv.rank() != 2 || start + len > xv.extent(1) {
            return Err(Error::BadOperand {
                op: "slice_cols",
                detail: alloc::format!(
                    "cols {start}..{} out of bounds for shape {:?}",
                    start + len,
                    xv.shape()
                ),
            });
        }
        let rows = xv.extent(0);
        let mut out = Vec::with_capacity(rows * len);
        for i in 0..rows {
            out.extend_from_slice(&xv.row(i)[start..start + len]);
        }
        let value = Tensor::from_vec(vec![rows, len], out)?;
        Ok(self.push(value, Record::SliceCols { x, start, len }))
    }

    pub fn concat_cols(&mut self, parts: &[VarId]) -> Result<VarId> {
        if parts.is_empty() {
            return Err(Error::BadOperand {
                op: "concat_cols",
                detail: "no parts".into(),
            });
        }
        let rows = self.value(parts[0]).extent(0);
        let total: usize = parts.iter().map(|&p| self.value(p).extent(1)).sum();
        let mut out = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for &p in parts {
                let pv = self.value(p);
                if pv.rank() != 2 || pv.extent(0) != rows {
                    return Err(Error::BadOperand {
                        op: "concat_cols",
                        detail: alloc::format!("part shape {:?} has wrong row count", pv.shape()),
                    });
                }
                out.extend_from_slice(pv.row(i));
            }
        }
        let value = Tensor::from_vec(vec![rows, total], out)?;
        Ok(self.push(
            value,
            Record::ConcatCols {
                parts: parts.to_vec(),
            },
        ))
    }

    /// Fused tiled online-softmax attention core over dense `n x dh` inputs.
    pub fn flash_core(
        &mut self,
        q: VarId,
        k: VarId,
        v: VarId,
        scale: f32,
        tile_rows: usize,
        tile_cols: usize,
    ) -> Result<VarId> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        if qv.rank() != 2 || qv.shape() != kv.shape() || qv.shape() != vv.shape() {
            return Err(Error::ShapeMismatch {
                op: "flash_core",
                left: qv.shape().to_vec(),
                right: kv.shape().to_vec(),
            });
        }
        let (n, dh) = (qv.extent(0), qv.extent(1));
        let mut out = vec![0.0f32; n * dh];
        let mut lse = vec![0.0f32; n];
        self.with_counter(|s, c| {
            let qm = ops::MatView::dense(s.value(q).data(), n, dh);
            let km = ops::MatView::dense(s.value(k).data(), n, dh);
            let vm = ops::MatView::dense(s.value(v).data(), n, dh);
            let om = ops::MatViewMut::new(&mut out, n, dh, dh, 0);
            flash_core_forward(
                qm,
                km,
                vm,
                om,
                scale,
                tile_rows,
                tile_cols,
                Some(&mut lse),
                crate::attention::Fault::None,
                c,
            );
        });
        let value = Tensor::from_vec(vec![n, dh], out)?;
        Ok(self.push(
            value,
            Record::FlashCore {
                q,
                k,
                v,
                scale,
                tile_rows,
                tile_cols,
                lse,
            },
        ))
    }

    /// Reverse sweep from a scalar loss. Returns one gradient per
    /// `requires_grad` leaf (zeros for leaves the loss does not reach).
    pub fn backward(&mut self, loss: VarId) -> Result<GradMap> {
        if !self.value(loss).is_scalar() {
            return Err(Error::NonScalarLoss {
                shape: self.value(loss).shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..self.nodes.len()).rev() {
            let Some(g) = grads[i].take() else { continue };
            // Leaves keep their gradient; everything else propagates then drops it.
            let keep = matches!(
                self.nodes[i].record,
                Record::Leaf {
                    requires_grad: true
                }
            );
            self.propagate(i, &g, &mut grads)?;
            if keep {
                grads[i] = Some(g);
            }
        }

        let mut map = GradMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if let Record::Leaf {
                requires_grad: true,
            } = node.record
            {
                let g = grads[i]
                    .take()
                    .unwrap_or_else(|| Tensor::zeros(node.value.shape()));
                map.insert(VarId(i), g);
            }
        }
        Ok(map)
    }

    fn accumulate(grads: &mut [Option<Tensor>], id: VarId, delta: Tensor) -> Result<()> {
        match &mut grads[id.0] {
            Some(existing) => {
                let summed = ops::add(existing, &delta)?;
                *existing = summed;
            }
            slot @ None => *slot = Some(delta),
        }
        Ok(())
    }

    fn propagate(&mut self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        // Work around simultaneous &self.nodes reads and &mut self.counter by
        // taking the counter out for the duration of the match.
        let mut ctr = core::mem::take(&mut self.counter);
        let result = self.propagate_inner(i, g, grads, &mut ctr);
        self.counter = ctr;
        result
    }

    fn propagate_inner(
        &self,
        i: usize,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
        ctr: &mut OpCounter,
    ) -> Result<()> {
        let value = |id: VarId| &self.nodes[id.0].value;
        match &self.nodes[i].record {
            Record::Leaf { .. } => {}
            Record::Matmul { a, b } => {
                let da = ops::matmul_nt(g, value(*b), ctr)?;
                let db = ops::matmul_tn(value(*a), g, ctr)?;
                Self::accumulate(grads, *a, da)?;
                Self::accumulate(grads, *b, db)?;
            }
            Record::MatmulNt { a, b } => {
                let da = ops::matmul(g, value(*b), ctr)?;
                let db = ops::matmul_tn(g, value(*a), ctr)?;
                Self::accumulate(grads, *a, da)?;
                Self::accumulate(grads, *b, db)?;
            }
            Record::Add { a, b } => {
                Self::accumulate(grads, *a, g.clone())?;
                Self::accumulate(grads, *b, g.clone())?;
            }
            Record::Sub { a, b } => {
                Self::accumulate(grads, *a, g.clone())?;
                Self::accumulate(grads, *b, ops::scale(g, -1.0))?;
            }
            Record::Mul { a, b } => {
                Self::accumulate(grads, *a, ops::mul(g, value(*b))?)?;
                Self::accumulate(grads, *b, ops::mul(g, value(*a))?)?;
            }
            Record::Scale { x, c } => {
                Self::accumulate(grads, *x, ops::scale(g, *c))?;
            }
            Record::AddBias { x, bias } => {
                Self::accumulate(grads, *x, g.clone())?;
                Self::accumulate(grads, *bias, ops::colsum_lastdim(g))?;
            }
            Record::Gelu { x } => {
                let xv = value(*x);
                let data = xv
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&xi, &gi)| gi * ops::gelu_grad_scalar(xi))
                    .collect();
                Self::accumulate(grads, *x, Tensor::from_vec(xv.shape().to_vec(), data)?)?;
            }
            Record::SoftmaxLastDim { x } => {
                let y = &self.nodes[i].value;
                let d = y.last_extent();
                let mut dx = vec![0.0f32; y.numel()];
                for ((dx_row, y_row), g_row) in dx
                    .chunks_exact_mut(d)
                    .zip(y.data().chunks_exact(d))
                    .zip(g.data().chunks_exact(d))
                {
                    let dot: f32 = y_row.iter().zip(g_row).map(|(&yv, &gv)| yv * gv).sum();
                    for ((o, &yv), &gv) in dx_row.iter_mut().zip(y_row).zip(g_row) {
                        *o = yv * (gv - dot);
                    }
                }
                Self::accumulate(grads, *x, Tensor::from_vec(y.shape().to_vec(), dx)?)?;
            }
            Record::LayerNorm {
                x,
                gamma,
                beta,
                eps,
            } => {
                let xv = value(*x);
                let gv = value(*gamma);
                let d = xv.last_extent();
                let dn = d as f32;
                let mut dx = vec![0.0f32; xv.numel()];
                let mut dgamma = vec![0.0f32; d];
                let mut dbeta = vec![0.0f32; d];
                for (row_idx, (x_row, g_row)) in xv
                    .data()
                    .chunks_exact(d)
                    .zip(g.data().chunks_exact(d))
                    .enumerate()
                {
                    let _ = row_idx;
                    let mean = x_row.iter().sum::<f32>() / dn;
                    let var = x_row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f32>() / dn;
                    let rstd = 1.0 / libm::sqrtf(var + eps);
                    // dy_hat and the two row means it needs.
                    let mut sum_dyh = 0.0f32;
                    let mut sum_dyh_xh = 0.0f32;
                    for j in 0..d {
                        let xh = (x_row[j] - mean) * rstd;
                        let dyh = g_row[j] * gv.data()[j];
                        sum_dyh += dyh;
                        sum_dyh_xh += dyh * xh;
                        dgamma[j] += g_row[j] * xh;
                        dbeta[j] += g_row[j];
                    }
                    let mean_dyh = sum_dyh / dn;
                    let mean_dyh_xh = sum_dyh_xh / dn;
                    let dx_row = &mut dx[row_idx * d..(row_idx + 1) * d];
                    for j in 0..d {
                        let xh = (x_row[j] - mean) * rstd;
                        let dyh = g_row[j] * gv.data()[j];
                        dx_row[j] = rstd * (dyh - mean_dyh - xh * mean_dyh_xh);
                    }
                }
                Self::accumulate(grads, *x, Tensor::from_vec(xv.shape().to_vec(), dx)?)?;
                Self::accumulate(grads, *gamma, Tensor::from_vec(vec![d], dgamma)?)?;
                Self::accumulate(grads, *beta, Tensor::from_vec(vec![d], dbeta)?)?;
            }
            Record::Sum { x } => {
                let xv = value(*x);
                let gs = g.item()?;
                Self::accumulate(grads, *x, Tensor::filled(xv.shape(), gs))?;
            }
            Record::SumSq { x } => {
                let xv = value(*x);
                let gs = g.item()?;
                Self::accumulate(grads, *x, ops::scale(xv, 2.0 * gs))?;
            }
            Record::Sqrt { x } => {
                let y = &self.nodes[i].value;
                // Subgradient 0 at exactly zero keeps an all-equal pair from
                // poisoning the loss with NaN.
                let data = y
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&yv, &gv)| if yv == 0.0 { 0.0 } else { gv * 0.5 / yv })
                    .collect();
                Self::accumulate(grads, *x, Tensor::from_vec(y.shape().to_vec(), data)?)?;
            }
            Record::GatherRows { x, indices } => {
                let xv = value(*x);
                let d = xv.extent(1);
                let mut dx = vec![0.0f32; xv.numel()];
                for (j, &row) in indices.iter().enumerate() {
                    let src = &g.data()[j * d..(j + 1) * d];
                    let dst = &mut dx[row * d..(row + 1) * d];
                    for (o, &v) in dst.iter_mut().zip(src) {
                        *o += v;
                    }
                }
                Self::accumulate(grads, *x, Tensor::from_vec(xv.shape().to_vec(), dx)?)?;
            }
            Record::ScatterRows { parts, indices } => {
                for (&p, idx) in parts.iter().zip(indices) {
                    let dp = ops::gather_rows(g, idx)?;
                    Self::accumulate(grads, p, dp)?;
                }
            }
            Record::SliceCols { x, start, len } => {
                let xv = value(*x);
                let (rows, cols) = (xv.extent(0), xv.extent(1));
                let mut dx = vec![0.0f32; rows * cols];
                for i_row in 0..rows {
                    let src = &g.data()[i_row * len..(i_row + 1) * len];
                    dx[i_row * cols + start..i_row * cols + start + len].copy_from_slice(src);
                }
                Self::accumulate(grads, *x, Tensor::from_vec(vec![rows, cols], dx)?)?;
            }
            Record::ConcatCols { parts } => {
                let rows = self.nodes[i].value.extent(0);
                let total = self.nodes[i].value.extent(1);
                let mut start = 0usize;
                for &p in parts {
                    let w = value(p).extent(1);
                    let mut dp = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        dp.extend_from_slice(&g.data()[r * total + start..r * total + start + w]);
                    }
                    Self::accumulate(grads, p, Tensor::from_vec(vec![rows, w], dp)?)?;
                    start += w;
                }
            }
            Record::FlashCore {
                q,
                k,
                v,
                scale,
                tile_rows,
                tile_cols,
                lse,
            } => {
                let (dq, dk, dv) = flash_core_backward(
                    value(*q),
                    value(*k),
                    value(*v),
                    &self.nodes[i].value,
                    lse,
                    g,
                    *scale,
                    *tile_rows,
                    *tile_cols,
                    ctr,
                )?;
                Self::accumulate(grads, *q, dq)?;
                Self::accumulate(grads, *k, dk)?;
                Self::accumulate(grads, *v, dv)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn sum_gradient_is_all_ones() {
        let mut tape = Tape::new();
        let x = tape.param(Rng::new(1).normal_tensor(&[3, 4], 1.0));
        let loss = tape.sum(x);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads[&x], Tensor::filled(&[3, 4], 1.0));
    }

    #[test]
    fn sumsq_gradient_is_two_x() {
        let mut tape = Tape::new();
        let xt = Rng::new(2).normal_tensor(&[5], 1.0);
        let expect = ops::scale(&xt, 2.0);
        let x = tape.param(xt);
        let loss = tape.sumsq(x);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads[&x], expect);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::zeros(&[2, 2]));
        let y = tape.scale(x, 2.0);
        assert!(matches!(tape.backward(y), Err(Error::NonScalarLoss { .. })));
    }

    #[test]
    fn unreached_leaf_gets_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::filled(&[2], 1.0));
        let unused = tape.param(Tensor::filled(&[3], 1.0));
        let loss = tape.sum(x);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads[&unused], Tensor::zeros(&[3]));
    }

    #[test]
    fn matmul_gradients_match_hand_derivation() {
        // loss = sum(a*b) => da = ones * b^T, db = a^T * ones.
        let mut tape = Tape::new();
        let at = Tensor::from_vec(vec![2, 2], vec![1., 2., 3., 4.]).unwrap();
        let bt = Tensor::from_vec(vec![2, 2], vec![5., 6., 7., 8.]).unwrap();
        let a = tape.param(at);
        let b = tape.param(bt);
        let y = tape.matmul(a, b).unwrap();
        let loss = tape.sum(y);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads[&a].data(), &[11., 15., 11., 15.]);
        assert_eq!(grads[&b].data(), &[4., 4., 6., 6.]);
    }

    #[test]
    fn gather_scatter_roundtrip_gradient_is_identity() {
        let mut tape = Tape::new();
        let x = tape.param(Rng::new(3).normal_tensor(&[4, 2], 1.0));
        let top = tape.gather_rows(x, &[0, 2]).unwrap();
        let bottom = tape.gather_rows(x, &[1, 3]).unwrap();
        let y = tape
            .scatter_rows(&[top, bottom], &[vec![0, 2], vec![1, 3]], 4)
            .unwrap();
        assert_eq!(tape.value(y), tape.value(x));
        let loss = tape.sumsq(y);
        let grads = tape.backward(loss).unwrap();
        let expect = ops::scale(tape.value(x), 2.0);
        assert_eq!(grads[&x], expect);
    }

    #[test]
    fn slice_concat_roundtrip_preserves_value_and_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(Rng::new(4).normal_tensor(&[3, 6], 1.0));
        let left = tape.slice_cols(x, 0, 2).unwrap();
        let right = tape.slice_cols(x, 2, 4).unwrap();
        let back = tape.concat_cols(&[left, right]).unwrap();
        assert_eq!(tape.value(back), tape.value(x));
        let loss = tape.sum(back);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads[&x], Tensor::filled(&[3, 6], 1.0));
    }
}
