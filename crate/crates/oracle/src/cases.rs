//! Named gradient-check cases covering every differentiable operation plus
//! the full layer-wise loss on a two-block toy encoder.
//!
//! Each case records a computation on a fresh tape, reduces the output to a
//! scalar through a fixed random linear functional, backpropagates, and
//! compares every parameter gradient against central differences of the f64
//! reference forward. Shapes vary a little with the seed so repeated runs
//! exercise more than one geometry.

use crate::fd::{central_diff, grad_error, GRADCHECK_STEP};
use crate::ref64::{
    encode_ref, gelu64, layernorm64, layerwise_loss_ref, logit_loss_ref, matmul64, mhsa_ref,
    softmax64, sparse_mhsa_ref, to_f64, RefAttnWeights,
};
use voxtr_core::attention::{build_segment_plan, AttentionConfig, AttentionWeightVars};
use voxtr_core::distill::{layerwise_loss_tape, logit_loss_tape, NormMode};
use voxtr_core::encoder::{
    encode, encode_tape, AttentionVariant, AttnSublayerVars, BlockParamVars, EncoderParamVars,
    EncoderParams, ViTConfig, LAYERNORM_EPS,
};
use voxtr_core::tape::{Tape, VarId};
use voxtr_core::{Error, OpCounter, Result, Rng, Tensor};

#[derive(Debug, Clone)]
pub struct CaseOutcome {
    pub name: &'static str,
    pub max_error: f64,
    pub elements_checked: usize,
}

const CASE_NAMES: &[&str] = &[
    "matmul",
    "matmul_nt",
    "elementwise_add",
    "elementwise_sub",
    "elementwise_mul",
    "scale",
    "add_bias",
    "gelu",
    "softmax_lastdim",
    "layernorm",
    "sum",
    "sumsq",
    "sqrt",
    "gather_scatter_rows",
    "slice_concat_cols",
    "flash_core",
    "naive_mhsa",
    "flash_mhsa",
    "sparse_flash_mhsa",
    "layerwise_loss_2block_encoder",
    "logit_loss_2block_encoder",
];

pub fn gradcheck_case_names() -> &'static [&'static str] {
    CASE_NAMES
}

pub fn run_gradcheck_case(name: &str, seed: u64) -> Result<CaseOutcome> {
    match name {
        "matmul" => case_matmul(seed),
        "matmul_nt" => case_matmul_nt(seed),
        "elementwise_add" => case_binary(seed, "elementwise_add"),
        "elementwise_sub" => case_binary(seed, "elementwise_sub"),
        "elementwise_mul" => case_binary(seed, "elementwise_mul"),
        "scale" => case_scale(seed),
        "add_bias" => case_add_bias(seed),
        "gelu" => case_gelu(seed),
        "softmax_lastdim" => case_softmax(seed),
        "layernorm" => case_layernorm(seed),
        "sum" => case_sum(seed),
        "sumsq" => case_sumsq(seed),
        "sqrt" => case_sqrt(seed),
        "gather_scatter_rows" => case_gather_scatter(seed),
        "slice_concat_cols" => case_slice_concat(seed),
        "flash_core" => case_flash_core(seed),
        "naive_mhsa" => case_mhsa(seed, AttentionVariant::Naive),
        "flash_mhsa" => case_mhsa(seed, AttentionVariant::Flash),
        "sparse_flash_mhsa" => case_mhsa(seed, AttentionVariant::SparseFlash),
        "layerwise_loss_2block_encoder" => case_encoder_loss(seed, false),
        "logit_loss_2block_encoder" => case_encoder_loss(seed, true),
        other => Err(Error::UnknownLabel {
            what: "gradcheck case",
            got: other.to_string(),
        }),
    }
}

/// Shared harness: analytic gradients via the tape, reference gradients via
/// central differences of `reference`, both reduced through the same random
/// linear functional.
fn check(
    name: &'static str,
    seed: u64,
    params: Vec<Tensor>,
    build: impl FnOnce(&mut Tape, &[VarId]) -> Result<VarId>,
    reference: impl Fn(&[Vec<f64>]) -> Vec<f64>,
) -> Result<CaseOutcome> {
    let mut tape = Tape::new();
    let ids: Vec<VarId> = params.iter().map(|t| tape.param(t.clone())).collect();
    let out = build(&mut tape, &ids)?;
    let out_shape = tape.value(out).shape().to_vec();
    let out_len = tape.value(out).numel();

    let mut weight_rng = Rng::new(seed ^ 0x00C0_FFEE);
    let weights: Vec<f32> = (0..out_len)
        .map(|_| 2.0 * weight_rng.next_f32() - 1.0)
        .collect();
    let weights64: Vec<f64> = weights.iter().map(|&w| w as f64).collect();
    let c = tape.constant(Tensor::from_vec(out_shape, weights)?);
    let prod = tape.mul(out, c)?;
    let loss = tape.sum(prod);
    let grad_map = tape.backward(loss)?;

    let params64: Vec<Vec<f64>> = params.iter().map(to_f64).collect();
    let mut eval = |values: &[Vec<f64>]| -> f64 {
        reference(values)
            .iter()
            .zip(&weights64)
            .map(|(o, w)| o * w)
            .sum()
    };
    let fd_grads = central_diff(&params64, GRADCHECK_STEP, &mut eval);

    let mut max_error = 0.0f64;
    let mut elements_checked = 0usize;
    for (id, fd) in ids.iter().zip(&fd_grads) {
        let analytic = &grad_map[id];
        for (&a, &f) in analytic.data().iter().zip(fd) {
            max_error = max_error.max(grad_error(a as f64, f));
            elements_checked += 1;
        }
    }
    Ok(CaseOutcome {
        name,
        max_error,
        elements_checked,
    })
}

fn seeded(shape: &[usize], seed: u64, std: f32) -> Tensor {
    Rng::new(seed).normal_tensor(shape, std)
}

fn case_matmul(seed: u64) -> Result<CaseOutcome> {
    let (m, k, n) = (3 + (seed % 2) as usize, 4, 2 + (seed % 3) as usize);
    let a = seeded(&[m, k], seed, 1.0);
    let b = seeded(&[k, n], seed ^ 1, 1.0);
    check(
        "matmul",
        seed,
        vec![a, b],
        |tape, ids| tape.matmul(ids[0], ids[1]),
        move |vals| matmul64(&vals[0], &vals[1], m, k, n),
    )
}

fn case_matmul_nt(seed: u64) -> Result<CaseOutcome> {
    let (m, p, n) = (3, 4 + (seed % 2) as usize, 5);
    let a = seeded(&[m, p], seed, 1.0);
    let b = seeded(&[n, p], seed ^ 1, 1.0);
    check(
        "matmul_nt",
        seed,
        vec![a, b],
        |tape, ids| tape.matmul_nt(ids[0], ids[1]),
        move |vals| {
            // Transpose b explicitly, then multiply by the definition.
            let mut bt = vec![0.0; p * n];
            for i in 0..n {
                for j in 0..p {
                    bt[j * n + i] = vals[1][i * p + j];
                }
            }
            matmul64(&vals[0], &bt, m, p, n)
        },
    )
}

fn case_binary(seed: u64, which: &'static str) -> Result<CaseOutcome> {
    let shape = [3usize, 4 + (seed % 3) as usize];
    let a = seeded(&shape, seed, 1.0);
    let b = seeded(&shape, seed ^ 1, 1.0);
    check(
        which,
        seed,
        vec![a, b],
        |tape, ids| match which {
            "elementwise_add" => tape.add(ids[0], ids[1]),
            "elementwise_sub" => tape.sub(ids[0], ids[1]),
            _ => tape.mul(ids[0], ids[1]),
        },
        move |vals| {
            vals[0]
                .iter()
                .zip(&vals[1])
                .map(|(x, y)| match which {
                    "elementwise_add" => x + y,
                    "elementwise_sub" => x - y,
                    _ => x * y,
                })
                .collect()
        },
    )
}

fn case_scale(seed: u64) -> Result<CaseOutcome> {
    let x = seeded(&[4, 3], seed, 1.0);
    check(
        "scale",
        seed,
        vec![x],
        |tape, ids| Ok(tape.scale(ids[0], -1.7)),
        |vals| vals[0].iter().map(|v| v * -1.7f32 as f64).collect(),
    )
}

fn case_add_bias(seed: u64) -> Result<CaseOutcome> {
    let d = 4 + (seed % 2) as usize;
    let x = seeded(&[5, d], seed, 1.0);
    let b = seeded(&[d], seed ^ 1, 1.0);
    check(
        "add_bias",
        seed,
        vec![x, b],
        |tape, ids| tape.add_bias(ids[0], ids[1]),
        move |vals| {
            vals[0]
                .chunks_exact(d)
                .flat_map(|row| row.iter().zip(&vals[1]).map(|(x, b)| x + b))
                .collect()
        },
    )
}

fn case_gelu(seed: u64) -> Result<CaseOutcome> {
    let x = seeded(&[3, 5], seed, 2.0);
    check(
        "gelu",
        seed,
        vec![x],
        |tape, ids| Ok(tape.gelu(ids[0])),
        |vals| vals[0].iter().map(|&v| gelu64(v)).collect(),
    )
}

fn case_softmax(seed: u64) -> Result<CaseOutcome> {
    let d = 5 + (seed % 3) as usize;
    let x = seeded(&[4, d], seed, 1.5);
    check(
        "softmax_lastdim",
        seed,
        vec![x],
        |tape, ids| Ok(tape.softmax_lastdim(ids[0])),
        move |vals| softmax64(&vals[0], d),
    )
}

fn case_layernorm(seed: u64) -> Result<CaseOutcome> {
    let d = 6;
    let x = seeded(&[4, d], seed, 1.5);
    let mut gamma = Tensor::filled(&[d], 1.0);
    for (g, n) in gamma
        .data_mut()
        .iter_mut()
        .zip(seeded(&[d], seed ^ 1, 0.3).into_data())
    {
        *g += n;
    }
    let beta = seeded(&[d], seed ^ 2, 0.3);
    check(
        "layernorm",
        seed,
        vec![x, gamma, beta],
        |tape, ids| tape.layernorm(ids[0], ids[1], ids[2], LAYERNORM_EPS),
        move |vals| layernorm64(&vals[0], &vals[1], &vals[2], LAYERNORM_EPS as f64, d),
    )
}

fn case_sum(seed: u64) -> Result<CaseOutcome> {
    let x = seeded(&[3, 4], seed, 1.0);
    check(
        "sum",
        seed,
        vec![x],
        |tape, ids| Ok(tape.sum(ids[0])),
        |vals| vec![vals[0].iter().sum()],
    )
}

fn case_sumsq(seed: u64) -> Result<CaseOutcome> {
    let x = seeded(&[3, 4], seed, 1.0);
    check(
        "sumsq",
        seed,
        vec![x],
        |tape, ids| Ok(tape.sumsq(ids[0])),
        |vals| vec![vals[0].iter().map(|v| v * v).sum()],
    )
}

fn case_sqrt(seed: u64) -> Result<CaseOutcome> {
    // Strictly positive inputs keep the derivative finite.
    let mut rng = Rng::new(seed);
    let data: Vec<f32> = (0..12).map(|_| 0.5 + rng.next_f32()).collect();
    let x = Tensor::from_vec(vec![3, 4], data)?;
    check(
        "sqrt",
        seed,
        vec![x],
        |tape, ids| Ok(tape.sqrt(ids[0])),
        |vals| vals[0].iter().map(|v| v.sqrt()).collect(),
    )
}

fn case_gather_scatter(seed: u64) -> Result<CaseOutcome> {
    let x = seeded(&[6, 3], seed, 1.0);
    let even = vec![0usize, 2, 4];
    let odd = vec![1usize, 3, 5];
    let (even_c, odd_c) = (even.clone(), odd.clone());
    check(
        "gather_scatter_rows",
        seed,
        vec![x],
        move |tape, ids| {
            let top = tape.gather_rows(ids[0], &even)?;
            let bottom = tape.gather_rows(ids[0], &odd)?;
            let doubled = tape.scale(bottom, 2.0);
            tape.scatter_rows(&[top, doubled], &[even.clone(), odd.clone()], 6)
        },
        move |vals| {
            let mut out = vec![0.0; 18];
            for (j, &row) in even_c.iter().enumerate() {
                out[row * 3..row * 3 + 3]
                    .copy_from_slice(&vals[0][even_c[j] * 3..even_c[j] * 3 + 3]);
                let _ = row;
            }
            for &row in &odd_c {
                for t in 0..3 {
                    out[row * 3 + t] = 2.0 * vals[0][row * 3 + t];
                }
            }
            out
        },
    )
}

fn case_slice_concat(seed: u64) -> Result<CaseOutcome> {
    let x = seeded(&[4, 6], seed, 1.0);
    check(
        "slice_concat_cols",
        seed,
        vec![x],
        |tape, ids| {
            let left = tape.slice_cols(ids[0], 0, 2)?;
            let right = tape.slice_cols(ids[0], 2, 4)?;
            // Swap halves so the gradient routing is non-trivial.
            tape.concat_cols(&[right, left])
        },
        |vals| {
            let mut out = Vec::with_capacity(24);
            for row in vals[0].chunks_exact(6) {
                out.extend_from_slice(&row[2..6]);
                out.extend_from_slice(&row[0..2]);
            }
            out
        },
    )
}

fn case_flash_core(seed: u64) -> Result<CaseOutcome> {
    let (n, dh) = (6 + (seed % 3) as usize, 4);
    let scale = 1.0 / (dh as f32).sqrt();
    let q = seeded(&[n, dh], seed, 1.0);
    let k = seeded(&[n, dh], seed ^ 1, 1.0);
    let v = seeded(&[n, dh], seed ^ 2, 1.0);
    check(
        "flash_core",
        seed,
        vec![q, k, v],
        move |tape, ids| tape.flash_core(ids[0], ids[1], ids[2], scale, 3, 3),
        move |vals| {
            // Dense single-head attention by the definition.
            let mut scores = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    let mut acc = 0.0;
                    for t in 0..dh {
                        acc += vals[0][i * dh + t] * vals[1][j * dh + t];
                    }
                    scores[i * n + j] = acc * scale as f64;
                }
            }
            let probs = softmax64(&scores, n);
            matmul64(&probs, &vals[2], n, n, dh)
        },
    )
}

fn attention_param_tensors(n: usize, d: usize, seed: u64) -> Vec<Tensor> {
    let mut rng = Rng::new(seed);
    let mut params = vec![rng.normal_tensor(&[n, d], 1.0)];
    for _ in 0..4 {
        params.push(rng.normal_tensor(&[d, d], 0.3));
    }
    for _ in 0..4 {
        params.push(rng.normal_tensor(&[d], 0.1));
    }
    params
}

fn case_mhsa(seed: u64, variant: AttentionVariant) -> Result<CaseOutcome> {
    let (n, d, h, w, r) = (8, 8, 2, 2, 2);
    let name = match variant {
        AttentionVariant::Naive => "naive_mhsa",
        AttentionVariant::Flash => "flash_mhsa",
        AttentionVariant::SparseFlash => "sparse_flash_mhsa",
    };
    let cfg = AttentionConfig::new(d, h)
        .with_segments(w, r)
        .with_tiles(3, 3);
    let params = attention_param_tensors(n, d, seed);
    let segments = build_segment_plan(n, w, r)?.segments().to_vec();
    check(
        name,
        seed,
        params,
        move |tape, ids| {
            let wv = AttentionWeightVars {
                wq: ids[1],
                wk: ids[2],
                wv: ids[3],
                wo: ids[4],
                bq: Some(ids[5]),
                bk: Some(ids[6]),
                bv: Some(ids[7]),
                bo: Some(ids[8]),
            };
            match variant {
                AttentionVariant::Naive => {
                    voxtr_core::attention::naive_mhsa_tape(tape, ids[0], &wv, &cfg)
                }
                AttentionVariant::Flash => {
                    voxtr_core::attention::flash_mhsa_tape(tape, ids[0], &wv, &cfg)
                }
                AttentionVariant::SparseFlash => {
                    voxtr_core::attention::sparse_flash_mhsa_tape(tape, ids[0], &wv, &cfg)
                }
            }
        },
        move |vals| {
            let wts = RefAttnWeights {
                embed_dim: d,
                num_heads: h,
                wq: &vals[1],
                wk: &vals[2],
                wv: &vals[3],
                wo: &vals[4],
                bq: Some(&vals[5]),
                bk: Some(&vals[6]),
                bv: Some(&vals[7]),
                bo: Some(&vals[8]),
            };
            match variant {
                AttentionVariant::SparseFlash => sparse_mhsa_ref(&vals[0], n, &wts, &segments),
                _ => mhsa_ref(&vals[0], n, &wts),
            }
        },
    )
}

/// Rebuild tape handles for encoder parameters from a flat id list in
/// `named_tensors` order.
fn vars_from_ids(structure: &EncoderParams, ids: &[VarId]) -> EncoderParamVars {
    let mut iter = ids.iter().copied();
    let mut next = move || iter.next().expect("id list matches parameter count");
    let patch_proj = next();
    let patch_bias = next();
    let pos_embed = next();
    let blocks = structure
        .blocks
        .iter()
        .map(|b| {
            let attn = b.attn.as_ref().map(|a| {
                let ln_gamma = next();
                let ln_beta = next();
                let wq = next();
                let wk = next();
                let wv = next();
                let wo = next();
                AttnSublayerVars {
                    ln_gamma,
                    ln_beta,
                    weights: AttentionWeightVars {
                        wq,
                        wk,
                        wv,
                        wo,
                        bq: a.weights.bq.as_ref().map(|_| next()),
                        bk: a.weights.bk.as_ref().map(|_| next()),
                        bv: a.weights.bv.as_ref().map(|_| next()),
                        bo: a.weights.bo.as_ref().map(|_| next()),
                    },
                }
            });
            BlockParamVars {
                attn,
                ffn_ln_gamma: next(),
                ffn_ln_beta: next(),
                ffn_w1: next(),
                ffn_b1: next(),
                ffn_w2: next(),
                ffn_b2: next(),
            }
        })
        .collect();
    EncoderParamVars {
        patch_proj,
        patch_bias,
        pos_embed,
        blocks,
    }
}

/// The full distillation loss on a 4-layer teacher / 2-block student pair,
/// differentiated with respect to every student parameter.
fn case_encoder_loss(seed: u64, logit: bool) -> Result<CaseOutcome> {
    let teacher_cfg = ViTConfig {
        input_extent: 4,
        patch_size: 2,
        embed_dim: 8,
        num_layers: 4,
        num_heads: 2,
        ffn_hidden_ratio: 2,
        ffn_only_prefix: 0,
        attention_variant: AttentionVariant::Flash,
        segment_size: 2,
        dilation_interval: 2,
        tile_rows: 3,
        tile_cols: 3,
    };
    let student_cfg = ViTConfig {
        num_layers: 2,
        ffn_only_prefix: 1,
        attention_variant: AttentionVariant::SparseFlash,
        ..teacher_cfg.clone()
    };
    let teacher = EncoderParams::seeded(&teacher_cfg, &mut Rng::new(seed ^ 0xA1))?;
    let student = EncoderParams::seeded(&student_cfg, &mut Rng::new(seed ^ 0xB2))?;
    let volume = Rng::new(seed ^ 0xC3).normal_tensor(&[4, 4, 4], 1.0);

    let mut ctr = OpCounter::new();
    let teacher_outs = encode(&volume, &teacher_cfg, &teacher, &mut ctr)?;
    let teacher_outs64: Vec<Vec<f64>> = teacher_outs.iter().map(to_f64).collect();

    let k = 1 + (seed % 2) as usize;
    let mode = if seed.is_multiple_of(3) {
        NormMode::Rms
    } else {
        NormMode::PlainL2
    };
    let name = if logit {
        "logit_loss_2block_encoder"
    } else {
        "layerwise_loss_2block_encoder"
    };

    let params: Vec<Tensor> = student
        .named_tensors()
        .into_iter()
        .map(|(_, t)| t.clone())
        .collect();
    let structure = student.clone();
    let structure_ref = student.clone();
    let volume64 = to_f64(&volume);
    let scfg = student_cfg.clone();
    let scfg_ref = student_cfg.clone();
    let t_outs = teacher_outs;

    check(
        name,
        seed,
        params,
        move |tape, ids| {
            let vars = vars_from_ids(&structure, ids);
            let outs = encode_tape(tape, &volume, &scfg, &structure, &vars)?;
            if logit {
                logit_loss_tape(tape, t_outs.final_output(), *outs.last().unwrap(), mode)
            } else {
                layerwise_loss_tape(tape, &t_outs, &outs, k, mode)
            }
        },
        move |values| {
            let outs = encode_ref(&volume64, &scfg_ref, &structure_ref, values);
            let loss = if logit {
                logit_loss_ref(teacher_outs64.last().unwrap(), outs.last().unwrap(), mode)
            } else {
                layerwise_loss_ref(&teacher_outs64, &outs, k, mode)
            };
            vec![loss]
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_rejects_unknown_names() {
        assert!(run_gradcheck_case("not_a_case", 1).is_err());
    }

    #[test]
    fn registry_has_enough_cases() {
        assert!(gradcheck_case_names().len() >= 8);
    }

    #[test]
    fn a_fast_case_passes() {
        let out = run_gradcheck_case("matmul", 3).unwrap();
        assert!(
            out.max_error <= 1e-3,
            "matmul gradcheck error {}",
            out.max_error
        );
        assert!(out.elements_checked > 0);
    }
}
