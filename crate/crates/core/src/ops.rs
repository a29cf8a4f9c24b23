//! Raw forward kernels.
//!
//! Everything is 32-bit storage and compute. Matmul-family kernels take the
//! [`OpCounter`] and record 2·m·k·n flops; elementwise kernels are uncounted
//! (see the convention note in [`crate::counter`]). Kernels allocate their
//! outputs and never mutate inputs.

use crate::counter::OpCounter;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use alloc::vec;
use alloc::vec::Vec;

/// Immutable strided 2D view over a flat buffer. Lets attention cores walk
/// per-head and per-segment rows without gather copies.
#[derive(Clone, Copy)]
pub(crate) struct MatView<'a> {
    data: &'a [f32],
    pub rows: usize,
    pub cols: usize,
    row_stride: usize,
    offset: usize,
}

impl<'a> MatView<'a> {
    pub fn new(
        data: &'a [f32],
        rows: usize,
        cols: usize,
        row_stride: usize,
        offset: usize,
    ) -> Self {
        debug_assert!(rows == 0 || offset + (rows - 1) * row_stride + cols <= data.len());
        MatView {
            data,
            rows,
            cols,
            row_stride,
            offset,
        }
    }

    /// Contiguous view over a `rows x cols` matrix.
    pub fn dense(data: &'a [f32], rows: usize, cols: usize) -> Self {
        Self::new(data, rows, cols, cols, 0)
    }

    #[inline]
    pub fn row(&self, i: usize) -> &'a [f32] {
        let start = self.offset + i * self.row_stride;
        &self.data[start..start + self.cols]
    }
}

/// Mutable counterpart of [`MatView`] for writing attention outputs in place.
pub(crate) struct MatViewMut<'a> {
    data: &'a mut [f32],
    cols: usize,
    row_stride: usize,
    offset: usize,
}

impl<'a> MatViewMut<'a> {
    pub fn new(
        data: &'a mut [f32],
        rows: usize,
        cols: usize,
        row_stride: usize,
        offset: usize,
    ) -> Self {
        debug_assert!(rows == 0 || offset + (rows - 1) * row_stride + cols <= data.len());
        MatViewMut {
            data,
            cols,
            row_stride,
            offset,
        }
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        let start = self.offset + i * self.row_stride;
        &mut self.data[start..start + self.cols]
    }
}

fn check_rank2(op: &'static str, t: &Tensor) -> Result<()> {
    if t.rank() != 2 {
        return Err(Error::BadOperand {
            op,
            detail: alloc::format!("expected rank 2, got shape {:?}", t.shape()),
        });
    }
    Ok(())
}

/// `a (m x k) * b (k x n) -> (m x n)`. Adds `2*m*k*n` flops.
pub fn matmul(a: &Tensor, b: &Tensor, ctr: &mut OpCounter) -> Result<Tensor> {
    check_rank2("matmul", a)?;
    check_rank2("matmul", b)?;
    let (m, k) = (a.extent(0), a.extent(1));
    let (k2, n) = (b.extent(0), b.extent(1));
    if k != k2 {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let mut out = vec![0.0f32; m * n];
    let (ad, bd) = (a.data(), b.data());
    for i in 0..m {
        let arow = &ad[i * k..(i + 1) * k];
        let crow = &mut out[i * n..(i + 1) * n];
        for (p, &a_ip) in arow.iter().enumerate() {
            let brow = &bd[p * n..(p + 1) * n];
            for (c, &b_pj) in crow.iter_mut().zip(brow) {
                *c += a_ip * b_pj;
            }
        }
    }
    ctr.add_flops(2 * (m as u64) * (k as u64) * (n as u64));
    Tensor::from_vec(vec![m, n], out)
}

/// `a (m x p) * b^T (p x n) -> (m x n)` where `b` is stored `n x p`.
pub fn matmul_nt(a: &Tensor, b: &Tensor, ctr: &mut OpCounter) -> Result<Tensor> {
    check_rank2("matmul_nt", a)?;
    check_rank2("matmul_nt", b)?;
    let (m, p) = (a.extent(0), a.extent(1));
    let (n, p2) = (b.extent(0), b.extent(1));
    if p != p2 {
        return Err(Error::ShapeMismatch {
            op: "matmul_nt",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        let arow = a.row(i);
        for j in 0..n {
            let brow = b.row(j);
            let mut acc = 0.0f32;
            for (x, y) in arow.iter().zip(brow) {
                acc += x * y;
            }
            out[i * n + j] = acc;
        }
    }
    ctr.add_flops(2 * (m as u64) * (p as u64) * (n as u64));
    Tensor::from_vec(vec![m, n], out)
}

/// `a^T (m x p) * b (p x n) -> (m x n)` where `a` is stored `p x m`.
pub fn matmul_tn(a: &Tensor, b: &Tensor, ctr: &mut OpCounter) -> Result<Tensor> {
    check_rank2("matmul_tn", a)?;
    check_rank2("matmul_tn", b)?;
    let (p, m) = (a.extent(0), a.extent(1));
    let (p2, n) = (b.extent(0), b.extent(1));
    if p != p2 {
        return Err(Error::ShapeMismatch {
            op: "matmul_tn",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let mut out = vec![0.0f32; m * n];
    for q in 0..p {
        let arow = a.row(q);
        let brow = b.row(q);
        for (i, &a_qi) in arow.iter().enumerate() {
            let crow = &mut out[i * n..(i + 1) * n];
            for (c, &b_qj) in crow.iter_mut().zip(brow) {
                *c += a_qi * b_qj;
            }
        }
    }
    ctr.add_flops(2 * (m as u64) * (p as u64) * (n as u64));
    Tensor::from_vec(vec![m, n], out)
}

fn zip_elementwise(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f32, f32) -> f32,
) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::from_vec(a.shape().to_vec(), data)
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_elementwise("add", a, b, |x, y| x + y)
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_elementwise("sub", a, b, |x, y| x - y)
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_elementwise("mul", a, b, |x, y| x * y)
}

pub fn scale(a: &Tensor, c: f32) -> Tensor {
    let data = a.data().iter().map(|&x| x * c).collect();
    Tensor::from_vec(a.shape().to_vec(), data).expect("same shape")
}

/// Broadcast-add a length-`d` bias over the last dimension.
pub fn add_bias(x: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let d = x.last_extent();
    if bias.rank() != 1 || bias.extent(0) != d {
        return Err(Error::ShapeMismatch {
            op: "add_bias",
            left: x.shape().to_vec(),
            right: bias.shape().to_vec(),
        });
    }
    let b = bias.data();
    let data = x
        .data()
        .chunks_exact(d)
        .flat_map(|row| row.iter().zip(b).map(|(&v, &bv)| v + bv))
        .collect();
    Tensor::from_vec(x.shape().to_vec(), data)
}

/// Sum of gradient rows; the backward of [`add_bias`].
pub fn colsum_lastdim(x: &Tensor) -> Tensor {
    let d = x.last_extent();
    let mut out = vec![0.0f32; d];
    for row in x.data().chunks_exact(d) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    Tensor::from_vec(vec![d], out).expect("length d")
}

/// Exact-erf GELU: `x * 0.5 * (1 + erf(x / sqrt(2)))`.
pub fn gelu(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| gelu_scalar(v)).collect();
    Tensor::from_vec(x.shape().to_vec(), data).expect("same shape")
}

#[inline]
pub fn gelu_scalar(x: f32) -> f32 {
    x * 0.5 * (1.0 + libm::erff(x * core::f32::consts::FRAC_1_SQRT_2))
}

/// d/dx of [`gelu_scalar`]: `Phi(x) + x * phi(x)`.
#[inline]
pub fn gelu_grad_scalar(x: f32) -> f32 {
    let cdf = 0.5 * (1.0 + libm::erff(x * core::f32::consts::FRAC_1_SQRT_2));
    let pdf = libm::expf(-0.5 * x * x) * 0.398_942_3_f32; // 1/sqrt(2*pi)
    cdf + x * pdf
}

/// Max-subtracted softmax over the last dimension.
pub fn softmax_lastdim(x: &Tensor) -> Tensor {
    let d = x.last_extent();
    let mut data = x.data().to_vec();
    for row in data.chunks_exact_mut(d) {
        let m = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f32;
        for v in row.iter_mut() {
            *v = libm::expf(*v - m);
            sum += *v;
        }
        let inv = 1.0 / sum;
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
    Tensor::from_vec(x.shape().to_vec(), data).expect("same shape")
}

/// Per-slice normalization over the last dimension followed by the affine map
/// `gamma * y + beta`. Variance is the biased (1/d) estimator.
pub fn layernorm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f32) -> Result<Tensor> {
    let d = x.last_extent();
    if gamma.rank() != 1 || gamma.extent(0) != d || beta.rank() != 1 || beta.extent(0) != d {
        return Err(Error::BadOperand {
            op: "layernorm",
            detail: alloc::format!(
                "gamma {:?} / beta {:?} must both be [{d}] for input {:?}",
                gamma.shape(),
                beta.shape(),
                x.shape()
            ),
        });
    }
    let (g, b) = (gamma.data(), beta.data());
    let mut data = x.data().to_vec();
    for row in data.chunks_exact_mut(d) {
        let mean = row.iter().sum::<f32>() / d as f32;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f32>() / d as f32;
        let rstd = 1.0 / libm::sqrtf(var + eps);
        for ((v, &gv), &bv) in row.iter_mut().zip(g).zip(b) {
            *v = (*v - mean) * rstd * gv + bv;
        }
    }
    Tensor::from_vec(x.shape().to_vec(), data)
}

pub fn sum(x: &Tensor) -> Tensor {
    Tensor::scalar(x.data().iter().sum())
}

pub fn sumsq(x: &Tensor) -> Tensor {
    Tensor::scalar(x.data().iter().map(|&v| v * v).sum())
}

pub fn sqrt_elem(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| libm::sqrtf(v)).collect();
    Tensor::from_vec(x.shape().to_vec(), data).expect("same shape")
}

/// Select rows of a rank-2 tensor in the given order.
pub fn gather_rows(x: &Tensor, indices: &[usize]) -> Result<Tensor> {
    check_rank2("gather_rows", x)?;
    let d = x.extent(1);
    let mut out = Vec::with_capacity(indices.len() * d);
    for &i in indices {
        if i >= x.extent(0) {
            return Err(Error::BadOperand {
                op: "gather_rows",
                detail: alloc::format!("row index {i} out of bounds for {} rows", x.extent(0)),
            });
        }
        out.extend_from_slice(x.row(i));
    }
    Tensor::from_vec(vec![indices.len(), d], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t2(rows: usize, cols: usize, v: &[f32]) -> Tensor {
        Tensor::from_vec(vec![rows, cols], v.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_leaves_input() {
        let eye = t2(3, 3, &[1., 0., 0., 0., 1., 0., 0., 0., 1.]);
        let a = t2(3, 3, &[2., -1., 0.5, 3., 7., -2., 0., 4., 9.]);
        let mut ctr = OpCounter::new();
        let out = matmul(&eye, &a, &mut ctr).unwrap();
        assert_eq!(out, a);
    }

    #[test]
    fn matmul_one_by_one() {
        let a = t2(1, 1, &[2.0]);
        let b = t2(1, 1, &[3.0]);
        let mut ctr = OpCounter::new();
        assert_eq!(matmul(&a, &b, &mut ctr).unwrap().data(), &[6.0]);
        assert_eq!(ctr.flops(), 2);
    }

    #[test]
    fn matmul_counts_exactly_2mkn() {
        let a = Tensor::zeros(&[4, 5]);
        let b = Tensor::zeros(&[5, 3]);
        let mut ctr = OpCounter::new();
        matmul(&a, &b, &mut ctr).unwrap();
        assert_eq!(ctr.flops(), 2 * 4 * 5 * 3);
    }

    #[test]
    fn matmul_rejects_inner_mismatch() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[4, 2]);
        let mut ctr = OpCounter::new();
        assert!(matches!(
            matmul(&a, &b, &mut ctr),
            Err(Error::ShapeMismatch { op: "matmul", .. })
        ));
    }

    #[test]
    fn transposed_variants_agree_with_plain() {
        let mut rng = crate::rng::Rng::new(17);
        let a = rng.normal_tensor(&[4, 6], 1.0);
        let b = rng.normal_tensor(&[6, 5], 1.0);
        let mut ctr = OpCounter::new();
        let plain = matmul(&a, &b, &mut ctr).unwrap();

        // a * b == a * (b^T)^T via matmul_nt with explicitly transposed b.
        let mut bt = Tensor::zeros(&[5, 6]);
        for i in 0..6 {
            for j in 0..5 {
                bt.data_mut()[j * 6 + i] = b.data()[i * 5 + j];
            }
        }
        let nt = matmul_nt(&a, &bt, &mut ctr).unwrap();
        assert!(plain.max_abs_diff(&nt).unwrap() <= 1e-6);

        let mut at = Tensor::zeros(&[6, 4]);
        for i in 0..4 {
            for j in 0..6 {
                at.data_mut()[j * 4 + i] = a.data()[i * 6 + j];
            }
        }
        let tn = matmul_tn(&at, &b, &mut ctr).unwrap();
        assert!(plain.max_abs_diff(&tn).unwrap() <= 1e-6);
    }

    #[test]
    fn softmax_constant_slice_is_uniform() {
        let x = Tensor::filled(&[4], 2.5);
        let out = softmax_lastdim(&x);
        for &v in out.data() {
            assert!((v - 0.25).abs() <= 1e-6);
        }
    }

    #[test]
    fn softmax_matches_analytic_two_point() {
        let x = Tensor::from_vec(vec![2], vec![0.0, core::f32::consts::LN_2]).unwrap();
        let out = softmax_lastdim(&x);
        assert!((out.data()[0] - 1.0 / 3.0).abs() <= 1e-6);
        assert!((out.data()[1] - 2.0 / 3.0).abs() <= 1e-6);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = crate::rng::Rng::new(3);
        let x = rng.normal_tensor(&[8, 8], 10.0);
        let out = softmax_lastdim(&x);
        for i in 0..8 {
            let s: f32 = out.row(i).iter().sum();
            assert!((s - 1.0).abs() <= 1e-6, "row {i} sums to {s}");
        }
    }

    #[test]
    fn layernorm_constant_slice_is_zero() {
        let x = Tensor::filled(&[2, 6], 3.0);
        let gamma = Tensor::filled(&[6], 1.0);
        let beta = Tensor::zeros(&[6]);
        let out = layernorm(&x, &gamma, &beta, 1e-5).unwrap();
        for &v in out.data() {
            assert!(v.abs() <= 1e-6);
        }
    }

    #[test]
    fn layernorm_zero_gamma_yields_beta() {
        let mut rng = crate::rng::Rng::new(9);
        let x = rng.normal_tensor(&[3, 5], 2.0);
        let gamma = Tensor::zeros(&[5]);
        let beta = Tensor::from_vec(vec![5], vec![1., -2., 3., -4., 5.]).unwrap();
        let out = layernorm(&x, &gamma, &beta, 1e-5).unwrap();
        for row in 0..3 {
            assert_eq!(out.row(row), beta.data());
        }
    }

    #[test]
    fn layernorm_rejects_bad_affine_length() {
        let x = Tensor::zeros(&[2, 4]);
        let g = Tensor::zeros(&[3]);
        let b = Tensor::zeros(&[4]);
        assert!(layernorm(&x, &g, &b, 1e-5).is_err());
    }

    #[test]
    fn gelu_known_points() {
        assert_eq!(gelu_scalar(0.0), 0.0);
        assert!((gelu_scalar(10.0) - 10.0).abs() <= 1e-6);
        assert!((gelu_scalar(1.0) - 0.8413).abs() <= 1e-4);
    }

    #[test]
    fn gather_rows_selects_in_order() {
        let x = t2(3, 2, &[0., 0., 1., 1., 2., 2.]);
        let g = gather_rows(&x, &[2, 0]).unwrap();
        assert_eq!(g.data(), &[2., 2., 0., 0.]);
        assert!(gather_rows(&x, &[3]).is_err());
    }
}
