//! Straight-line f64 reference math.
//!
//! Softmax here is the plain `exp/sum` definition (no max subtraction) and
//! attention is fully dense — these references are only ever evaluated at
//! desk-scale dimensions where overflow is not in play.

use voxtr_core::attention::build_segment_plan;
use voxtr_core::distill::NormMode;
use voxtr_core::encoder::{EncoderParams, ViTConfig, LAYERNORM_EPS};
use voxtr_core::Tensor;

pub fn to_f64(t: &Tensor) -> Vec<f64> {
    t.data().iter().map(|&v| v as f64).collect()
}

/// `a (m x k) * b (k x n)` by the definition, accumulating in f64.
pub fn matmul64(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for p in 0..k {
                acc += a[i * k + p] * b[p * n + j];
            }
            out[i * n + j] = acc;
        }
    }
    out
}

/// Row-wise `exp(x) / sum(exp(x))` over slices of length `d`.
pub fn softmax64(x: &[f64], d: usize) -> Vec<f64> {
    let mut out = x.to_vec();
    for row in out.chunks_exact_mut(d) {
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = v.exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Per-slice normalization with the biased variance estimator.
pub fn layernorm64(x: &[f64], gamma: &[f64], beta: &[f64], eps: f64, d: usize) -> Vec<f64> {
    let mut out = x.to_vec();
    for row in out.chunks_exact_mut(d) {
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rstd = 1.0 / (var + eps).sqrt();
        for (j, v) in row.iter_mut().enumerate() {
            *v = (*v - mean) * rstd * gamma[j] + beta[j];
        }
    }
    out
}

pub fn gelu64(x: f64) -> f64 {
    x * 0.5 * (1.0 + libm::erf(x / core::f64::consts::SQRT_2))
}

fn add_bias64(x: &mut [f64], bias: Option<&[f64]>, d: usize) {
    if let Some(b) = bias {
        for row in x.chunks_exact_mut(d) {
            for (v, &bv) in row.iter_mut().zip(b) {
                *v += bv;
            }
        }
    }
}

/// Weight slices for one attention operator, all length `d*d` (biases `d`).
pub struct RefAttnWeights<'a> {
    pub embed_dim: usize,
    pub num_heads: usize,
    pub wq: &'a [f64],
    pub wk: &'a [f64],
    pub wv: &'a [f64],
    pub wo: &'a [f64],
    pub bq: Option<&'a [f64]>,
    pub bk: Option<&'a [f64]>,
    pub bv: Option<&'a [f64]>,
    pub bo: Option<&'a [f64]>,
}

fn attend_rows(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    rows: &[usize],
    d: usize,
    num_heads: usize,
    out: &mut [f64],
) {
    let dh = d / num_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let w = rows.len();
    for head in 0..num_heads {
        let off = head * dh;
        let mut scores = vec![0.0; w * w];
        for (a, &i) in rows.iter().enumerate() {
            for (b, &j) in rows.iter().enumerate() {
                let mut acc = 0.0;
                for t in 0..dh {
                    acc += q[i * d + off + t] * k[j * d + off + t];
                }
                scores[a * w + b] = acc * scale;
            }
        }
        let probs = softmax64(&scores, w);
        for (a, &i) in rows.iter().enumerate() {
            for t in 0..dh {
                let mut acc = 0.0;
                for (b, &j) in rows.iter().enumerate() {
                    acc += probs[a * w + b] * v[j * d + off + t];
                }
                out[i * d + off + t] = acc;
            }
        }
    }
}

fn project64(x: &[f64], w: &[f64], b: Option<&[f64]>, n: usize, d: usize) -> Vec<f64> {
    let mut y = matmul64(x, w, n, d, d);
    add_bias64(&mut y, b, d);
    y
}

/// Dense multi-head self-attention, every token attending to every token.
pub fn mhsa_ref(x: &[f64], n: usize, wts: &RefAttnWeights<'_>) -> Vec<f64> {
    let d = wts.embed_dim;
    let q = project64(x, wts.wq, wts.bq, n, d);
    let k = project64(x, wts.wk, wts.bk, n, d);
    let v = project64(x, wts.wv, wts.bv, n, d);
    let mut core = vec![0.0; n * d];
    let all_rows: Vec<usize> = (0..n).collect();
    attend_rows(&q, &k, &v, &all_rows, d, wts.num_heads, &mut core);
    project64(&core, wts.wo, wts.bo, n, d)
}

/// Segment-restricted attention: full-sequence projections, independent
/// dense attention inside each index segment, outputs written back to the
/// original positions.
pub fn sparse_mhsa_ref(
    x: &[f64],
    n: usize,
    wts: &RefAttnWeights<'_>,
    segments: &[Vec<usize>],
) -> Vec<f64> {
    let d = wts.embed_dim;
    let q = project64(x, wts.wq, wts.bq, n, d);
    let k = project64(x, wts.wk, wts.bk, n, d);
    let v = project64(x, wts.wv, wts.bv, n, d);
    let mut core = vec![0.0; n * d];
    for seg in segments {
        attend_rows(&q, &k, &v, seg, d, wts.num_heads, &mut core);
    }
    project64(&core, wts.wo, wts.bo, n, d)
}

/// Raster-order patch flattening of a cubic volume.
fn patchify64(volume: &[f64], extent: usize, p: usize) -> Vec<f64> {
    let per_axis = extent / p;
    let mut rows = Vec::with_capacity(volume.len());
    for pz in 0..per_axis {
        for py in 0..per_axis {
            for px in 0..per_axis {
                for vz in 0..p {
                    for vy in 0..p {
                        for vx in 0..p {
                            let z = pz * p + vz;
                            let y = py * p + vy;
                            let x = px * p + vx;
                            rows.push(volume[(z * extent + y) * extent + x]);
                        }
                    }
                }
            }
        }
    }
    rows
}

/// Walks the flat `values` vector in `EncoderParams::named_tensors` order.
struct Cursor<'a> {
    values: &'a [Vec<f64>],
    next: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self) -> &'a [f64] {
        let out = &self.values[self.next];
        self.next += 1;
        out
    }
}

/// Full encoder forward in f64, mirroring the production architecture
/// definition. `structure` supplies which blocks carry attention parameters
/// and whether biases exist; `values` supplies the (possibly perturbed)
/// numbers, aligned with `EncoderParams::named_tensors` order.
///
/// Returns one `N*d` vector per block.
pub fn encode_ref(
    volume: &[f64],
    cfg: &ViTConfig,
    structure: &EncoderParams,
    values: &[Vec<f64>],
) -> Vec<Vec<f64>> {
    assert_eq!(
        values.len(),
        structure.num_tensors(),
        "value/params mismatch"
    );
    let d = cfg.embed_dim;
    let n = cfg.token_count();
    let hidden = cfg.ffn_hidden_dim();
    let mut cur = Cursor { values, next: 0 };

    let patch_proj = cur.take();
    let patch_bias = cur.take();
    let pos_embed = cur.take();
    let patches = patchify64(volume, cfg.input_extent, cfg.patch_size);
    let mut x = matmul64(&patches, patch_proj, n, cfg.patch_dim(), d);
    add_bias64(&mut x, Some(patch_bias), d);
    for (v, &p) in x.iter_mut().zip(pos_embed) {
        *v += p;
    }

    let mut outputs = Vec::with_capacity(cfg.num_layers);
    for (i, block) in structure.blocks.iter().enumerate() {
        if let Some(attn) = &block.attn {
            let ln_gamma = cur.take();
            let ln_beta = cur.take();
            let wq = cur.take();
            let wk = cur.take();
            let wv = cur.take();
            let wo = cur.take();
            let bq = attn.weights.bq.as_ref().map(|_| cur.take());
            let bk = attn.weights.bk.as_ref().map(|_| cur.take());
            let bv = attn.weights.bv.as_ref().map(|_| cur.take());
            let bo = attn.weights.bo.as_ref().map(|_| cur.take());
            if i >= cfg.ffn_only_prefix {
                let wts = RefAttnWeights {
                    embed_dim: d,
                    num_heads: cfg.num_heads,
                    wq,
                    wk,
                    wv,
                    wo,
                    bq,
                    bk,
                    bv,
                    bo,
                };
                let normed = layernorm64(&x, ln_gamma, ln_beta, LAYERNORM_EPS as f64, d);
                let attended = match cfg.attention_variant {
                    voxtr_core::encoder::AttentionVariant::SparseFlash => {
                        let plan = build_segment_plan(n, cfg.segment_size, cfg.dilation_interval)
                            .expect("config validated");
                        sparse_mhsa_ref(&normed, n, &wts, plan.segments())
                    }
                    _ => mhsa_ref(&normed, n, &wts),
                };
                for (v, a) in x.iter_mut().zip(attended) {
                    *v += a;
                }
            }
        }
        let ln_gamma = cur.take();
        let ln_beta = cur.take();
        let w1 = cur.take();
        let b1 = cur.take();
        let w2 = cur.take();
        let b2 = cur.take();
        let normed = layernorm64(&x, ln_gamma, ln_beta, LAYERNORM_EPS as f64, d);
        let mut h = matmul64(&normed, w1, n, d, hidden);
        add_bias64(&mut h, Some(b1), hidden);
        for v in h.iter_mut() {
            *v = gelu64(*v);
        }
        let mut f = matmul64(&h, w2, n, hidden, d);
        add_bias64(&mut f, Some(b2), d);
        for (v, a) in x.iter_mut().zip(f) {
            *v += a;
        }
        outputs.push(x.clone());
    }
    assert_eq!(cur.next, values.len(), "cursor must consume every tensor");
    outputs
}

fn norm64(diff_sumsq: f64, numel: usize, mode: NormMode) -> f64 {
    match mode {
        NormMode::PlainL2 => diff_sumsq.sqrt(),
        NormMode::Rms => (diff_sumsq / numel as f64).sqrt(),
    }
}

/// Single-sample `(1/k) * sum_{i=1..k} ||teacher[2i] - student[i]||`.
pub fn layerwise_loss_ref(
    teacher_outs: &[Vec<f64>],
    student_outs: &[Vec<f64>],
    k: usize,
    mode: NormMode,
) -> f64 {
    assert_eq!(teacher_outs.len(), 2 * student_outs.len());
    let mut total = 0.0;
    for i in 1..=k {
        let t = &teacher_outs[2 * i - 1];
        let s = &student_outs[i - 1];
        let ss: f64 = t.iter().zip(s).map(|(a, b)| (a - b) * (a - b)).sum();
        total += norm64(ss, s.len(), mode);
    }
    total / k as f64
}

pub fn logit_loss_ref(teacher_final: &[f64], student_final: &[f64], mode: NormMode) -> f64 {
    let ss: f64 = teacher_final
        .iter()
        .zip(student_final)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    norm64(ss, student_final.len(), mode)
}

/// Scalar Adam trajectory: returns the parameter value after each step.
pub fn adam_trajectory_ref(
    theta0: f64,
    grads: &[f64],
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Vec<f64> {
    let mut theta = theta0;
    let mut m = 0.0;
    let mut v = 0.0;
    let mut out = Vec::with_capacity(grads.len());
    for (step, &g) in grads.iter().enumerate() {
        let t = (step + 1) as f64;
        m = beta1 * m + (1.0 - beta1) * g;
        v = beta2 * v + (1.0 - beta2) * g * g;
        let m_hat = m / (1.0 - beta1.powf(t));
        let v_hat = v / (1.0 - beta2.powf(t));
        theta -= lr * m_hat / (v_hat.sqrt() + eps);
        out.push(theta);
    }
    out
}
