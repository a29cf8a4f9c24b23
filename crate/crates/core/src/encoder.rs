//! 3D ViT encoders: cubic-volume patch embedding followed by a stack of
//! pre-norm transformer blocks, with per-block outputs exposed for
//! distillation.
//!
//! Block layout is `layernorm -> attention -> residual` then
//! `layernorm -> FFN(gelu) -> residual`. Blocks with index below
//! `ffn_only_prefix` drop the entire attention sublayer (including its
//! layernorm) and run only the FFN half.

use crate::attention::{
    flash_mhsa, flash_mhsa_tape, naive_mhsa, naive_mhsa_tape, sparse_flash_mhsa,
    sparse_flash_mhsa_tape, AttentionConfig, AttentionWeightVars, AttentionWeights,
};
use crate::counter::OpCounter;
use crate::error::{Error, Result};
use crate::ops;
use crate::rng::Rng;
use crate::tape::{Tape, VarId};
use crate::tensor::Tensor;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

pub const LAYERNORM_EPS: f32 = 1e-5;
const INIT_STD: f32 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionVariant {
    Naive,
    Flash,
    SparseFlash,
}

impl AttentionVariant {
    pub fn parse(label: &str) -> Result<Self> {
        match label {
            "naive" => Ok(AttentionVariant::Naive),
            "flash" => Ok(AttentionVariant::Flash),
            "sparse_flash" | "sparse-flash" => Ok(AttentionVariant::SparseFlash),
            other => Err(Error::UnknownLabel {
                what: "attention variant",
                got: other.to_string(),
            }),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            AttentionVariant::Naive => "naive",
            AttentionVariant::Flash => "flash",
            AttentionVariant::SparseFlash => "sparse_flash",
        }
    }
}

/// Which preset dimensions to build; `Toy` keeps tests fast, `Paper` is the
/// full-size 128-cube configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PresetScale {
    Toy,
    Paper,
}

impl PresetScale {
    pub fn parse(label: &str) -> Result<Self> {
        match label {
            "toy" => Ok(PresetScale::Toy),
            "paper" | "paper-shape" => Ok(PresetScale::Paper),
            other => Err(Error::UnknownLabel {
                what: "scale",
                got: other.to_string(),
            }),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            PresetScale::Toy => "toy",
            PresetScale::Paper => "paper-shape",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ViTConfig {
    /// Side length of the cubic input volume.
    pub input_extent: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_hidden_ratio: usize,
    /// Leading blocks that skip the attention sublayer entirely.
    pub ffn_only_prefix: usize,
    pub attention_variant: AttentionVariant,
    pub segment_size: usize,
    pub dilation_interval: usize,
    pub tile_rows: usize,
    pub tile_cols: usize,
}

impl ViTConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || !self.input_extent.is_multiple_of(self.patch_size) {
            return Err(Error::PatchDivisibility {
                extent: self.input_extent,
                patch: self.patch_size,
            });
        }
        if self.ffn_only_prefix > self.num_layers {
            return Err(Error::InvalidConfig {
                detail: format!(
                    "ffn_only_prefix {} exceeds num_layers {}",
                    self.ffn_only_prefix, self.num_layers
                ),
            });
        }
        if self.num_layers == 0 || self.ffn_hidden_ratio == 0 {
            return Err(Error::InvalidConfig {
                detail: "num_layers and ffn_hidden_ratio must be >= 1".into(),
            });
        }
        self.attention_config().validate()?;
        if self.attention_variant == AttentionVariant::SparseFlash {
            let (n, w, r) = (
                self.token_count(),
                self.segment_size,
                self.dilation_interval,
            );
            if n % (w * r) != 0 {
                return Err(Error::SegmentDivisibility { n, w, r });
            }
        }
        Ok(())
    }

    pub fn tokens_per_axis(&self) -> usize {
        self.input_extent / self.patch_size
    }

    pub fn token_count(&self) -> usize {
        let t = self.tokens_per_axis();
        t * t * t
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.patch_size
    }

    pub fn ffn_hidden_dim(&self) -> usize {
        self.ffn_hidden_ratio * self.embed_dim
    }

    pub fn attention_config(&self) -> AttentionConfig {
        AttentionConfig::new(self.embed_dim, self.num_heads)
            .with_segments(self.segment_size, self.dilation_interval)
            .with_tiles(self.tile_rows, self.tile_cols)
    }
}

/// 12-layer teacher encoder preset.
pub fn make_teacher_config(scale: PresetScale) -> ViTConfig {
    match scale {
        PresetScale::Paper => ViTConfig {
            input_extent: 128,
            patch_size: 16,
            embed_dim: 768,
            num_layers: 12,
            num_heads: 12,
            ffn_hidden_ratio: 4,
            ffn_only_prefix: 0,
            attention_variant: AttentionVariant::Flash,
            segment_size: 64,
            dilation_interval: 2,
            tile_rows: AttentionConfig::DEFAULT_TILE,
            tile_cols: AttentionConfig::DEFAULT_TILE,
        },
        PresetScale::Toy => ViTConfig {
            input_extent: 32,
            patch_size: 8,
            embed_dim: 64,
            num_layers: 12,
            num_heads: 8,
            ffn_hidden_ratio: 4,
            ffn_only_prefix: 0,
            attention_variant: AttentionVariant::Flash,
            segment_size: 8,
            dilation_interval: 2,
            tile_rows: AttentionConfig::DEFAULT_TILE,
            tile_cols: AttentionConfig::DEFAULT_TILE,
        },
    }
}

/// 6-layer student with the first two blocks FFN-only and sparse flash
/// attention in the rest.
pub fn make_student_config(scale: PresetScale) -> ViTConfig {
    let teacher = make_teacher_config(scale);
    let num_heads = match scale {
        PresetScale::Paper => 6,
        PresetScale::Toy => 4,
    };
    ViTConfig {
        num_layers: 6,
        num_heads,
        ffn_only_prefix: 2,
        attention_variant: AttentionVariant::SparseFlash,
        ..teacher
    }
}

/// The attention half of one block: its layernorm plus projection weights.
#[derive(Debug, Clone, PartialEq)]
pub struct AttnSublayer {
    pub ln_gamma: Tensor,
    pub ln_beta: Tensor,
    pub weights: AttentionWeights,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    /// `None` for FFN-only blocks: those carry no attention parameters.
    pub attn: Option<AttnSublayer>,
    pub ffn_ln_gamma: Tensor,
    pub ffn_ln_beta: Tensor,
    pub ffn_w1: Tensor,
    pub ffn_b1: Tensor,
    pub ffn_w2: Tensor,
    pub ffn_b2: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub patch_proj: Tensor,
    pub patch_bias: Tensor,
    pub pos_embed: Tensor,
    pub blocks: Vec<BlockParams>,
}

impl EncoderParams {
    /// Truncated-normal(0.02) projections, unit layernorm gains, zero biases.
    pub fn seeded(cfg: &ViTConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.embed_dim;
        let n = cfg.token_count();
        let hidden = cfg.ffn_hidden_dim();
        let patch_proj = rng.trunc_normal_tensor(&[cfg.patch_dim(), d], INIT_STD);
        let patch_bias = Tensor::zeros(&[d]);
        let pos_embed = rng.trunc_normal_tensor(&[n, d], INIT_STD);
        let mut blocks = Vec::with_capacity(cfg.num_layers);
        for layer in 0..cfg.num_layers {
            let attn = if layer < cfg.ffn_only_prefix {
                None
            } else {
                Some(AttnSublayer {
                    ln_gamma: Tensor::filled(&[d], 1.0),
                    ln_beta: Tensor::zeros(&[d]),
                    weights: AttentionWeights::seeded(d, rng),
                })
            };
            blocks.push(BlockParams {
                attn,
                ffn_ln_gamma: Tensor::filled(&[d], 1.0),
                ffn_ln_beta: Tensor::zeros(&[d]),
                ffn_w1: rng.trunc_normal_tensor(&[d, hidden], INIT_STD),
                ffn_b1: Tensor::zeros(&[hidden]),
                ffn_w2: rng.trunc_normal_tensor(&[hidden, d], INIT_STD),
                ffn_b2: Tensor::zeros(&[d]),
            });
        }
        Ok(EncoderParams {
            patch_proj,
            patch_bias,
            pos_embed,
            blocks,
        })
    }

    /// Every parameter with a stable dotted name, in fixed order. The order
    /// defines the checkpoint layout and the optimizer state alignment.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = Vec::new();
        out.push(("patch_proj".to_string(), &self.patch_proj));
        out.push(("patch_bias".to_string(), &self.patch_bias));
        out.push(("pos_embed".to_string(), &self.pos_embed));
        for (i, b) in self.blocks.iter().enumerate() {
            let p = format!("blocks.{i}");
            if let Some(attn) = &b.attn {
                out.push((format!("{p}.attn.ln_gamma"), &attn.ln_gamma));
                out.push((format!("{p}.attn.ln_beta"), &attn.ln_beta));
                out.push((format!("{p}.attn.wq"), &attn.weights.wq));
                out.push((format!("{p}.attn.wk"), &attn.weights.wk));
                out.push((format!("{p}.attn.wv"), &attn.weights.wv));
                out.push((format!("{p}.attn.wo"), &attn.weights.wo));
                for (name, bias) in [
                    ("bq", &attn.weights.bq),
                    ("bk", &attn.weights.bk),
                    ("bv", &attn.weights.bv),
                    ("bo", &attn.weights.bo),
                ] {
                    if let Some(bias) = bias {
                        out.push((format!("{p}.attn.{name}"), bias));
                    }
                }
            }
            out.push((format!("{p}.ffn.ln_gamma"), &b.ffn_ln_gamma));
            out.push((format!("{p}.ffn.ln_beta"), &b.ffn_ln_beta));
            out.push((format!("{p}.ffn.w1"), &b.ffn_w1));
            out.push((format!("{p}.ffn.b1"), &b.ffn_b1));
            out.push((format!("{p}.ffn.w2"), &b.ffn_w2));
            out.push((format!("{p}.ffn.b2"), &b.ffn_b2));
        }
        out
    }

    /// Mutable view in the same order as [`named_tensors`](Self::named_tensors).
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        out.push(&mut self.patch_proj);
        out.push(&mut self.patch_bias);
        out.push(&mut self.pos_embed);
        for b in self.blocks.iter_mut() {
            if let Some(attn) = &mut b.attn {
                out.push(&mut attn.ln_gamma);
                out.push(&mut attn.ln_beta);
                out.push(&mut attn.weights.wq);
                out.push(&mut attn.weights.wk);
                out.push(&mut attn.weights.wv);
                out.push(&mut attn.weights.wo);
                for bias in [
                    &mut attn.weights.bq,
                    &mut attn.weights.bk,
                    &mut attn.weights.bv,
                    &mut attn.weights.bo,
                ]
                .into_iter()
                .flatten()
                {
                    out.push(bias);
                }
            }
            out.push(&mut b.ffn_ln_gamma);
            out.push(&mut b.ffn_ln_beta);
            out.push(&mut b.ffn_w1);
            out.push(&mut b.ffn_b1);
            out.push(&mut b.ffn_w2);
            out.push(&mut b.ffn_b2);
        }
        out
    }

    pub fn num_tensors(&self) -> usize {
        self.named_tensors().len()
    }

    /// Which block a named parameter belongs to, if any.
    pub fn block_of(name: &str) -> Option<usize> {
        name.strip_prefix("blocks.")?
            .split('.')
            .next()?
            .parse()
            .ok()
    }

    /// FNV-1a over names and little-endian payloads; order-sensitive, so any
    /// mutation (or reordering) changes the value.
    pub fn fingerprint(&self) -> u64 {
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                hash ^= b as u64;
                hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        for (name, t) in self.named_tensors() {
            eat(name.as_bytes());
            for v in t.data() {
                eat(&v.to_le_bytes());
            }
        }
        hash
    }

    fn validate_against(&self, cfg: &ViTConfig) -> Result<()> {
        cfg.validate()?;
        let d = cfg.embed_dim;
        let mismatch = |what: &str| Error::InvalidConfig {
            detail: format!("encoder params do not match config: {what}"),
        };
        if self.patch_proj.shape() != [cfg.patch_dim(), d] {
            return Err(mismatch("patch_proj"));
        }
        if self.pos_embed.shape() != [cfg.token_count(), d] {
            return Err(mismatch("pos_embed"));
        }
        if self.blocks.len() != cfg.num_layers {
            return Err(mismatch("block count"));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            if i >= cfg.ffn_only_prefix && b.attn.is_none() {
                return Err(mismatch("missing attention sublayer"));
            }
            if b.ffn_w1.shape() != [d, cfg.ffn_hidden_dim()]
                || b.ffn_w2.shape() != [cfg.ffn_hidden_dim(), d]
            {
                return Err(mismatch("ffn shapes"));
            }
        }
        Ok(())
    }
}

/// Per-block outputs of one encoder forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerOutputs {
    outputs: Vec<Tensor>,
}

impl LayerOutputs {
    /// Wrap pre-computed per-layer outputs (all shapes must match).
    pub fn from_tensors(outputs: Vec<Tensor>) -> Self {
        assert!(!outputs.is_empty());
        debug_assert!(outputs.iter().all(|t| t.shape() == outputs[0].shape()));
        LayerOutputs { outputs }
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    /// Output of block `layer` (0-based).
    pub fn get(&self, layer: usize) -> &Tensor {
        &self.outputs[layer]
    }

    pub fn final_output(&self) -> &Tensor {
        self.outputs.last().expect("num_layers >= 1")
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor> {
        self.outputs.iter()
    }
}

/// Flatten a cubic volume into raster-ordered patch rows, one row per patch
/// of `p^3` voxels.
fn patchify(volume: &Tensor, p: usize) -> Result<Tensor> {
    if volume.rank() != 3 {
        return Err(Error::BadOperand {
            op: "patch_embed_3d",
            detail: format!("expected a rank-3 volume, got shape {:?}", volume.shape()),
        });
    }
    let (dz, dy, dx) = (volume.extent(0), volume.extent(1), volume.extent(2));
    for extent in [dz, dy, dx] {
        if p == 0 || extent % p != 0 {
            return Err(Error::PatchDivisibility { extent, patch: p });
        }
    }
    let (nz, ny, nx) = (dz / p, dy / p, dx / p);
    let n = nz * ny * nx;
    let vol = volume.data();
    let mut rows = Vec::with_capacity(n * p * p * p);
    for pz in 0..nz {
        for py in 0..ny {
            for px in 0..nx {
                for vz in 0..p {
                    let z = pz * p + vz;
                    for vy in 0..p {
                        let y = py * p + vy;
                        let base = (z * dy + y) * dx + px * p;
                        rows.extend_from_slice(&vol[base..base + p]);
                    }
                }
            }
        }
    }
    Tensor::from_vec(alloc::vec![n, p * p * p], rows)
}

/// Tokenize a volume: linear projection of each flattened patch plus the
/// learned positional embedding.
pub fn patch_embed_3d(
    volume: &Tensor,
    cfg: &ViTConfig,
    params: &EncoderParams,
    ctr: &mut OpCounter,
) -> Result<Tensor> {
    let patches = patchify(volume, cfg.patch_size)?;
    if patches.extent(0) != params.pos_embed.extent(0) {
        return Err(Error::ShapeMismatch {
            op: "patch_embed_3d",
            left: patches.shape().to_vec(),
            right: params.pos_embed.shape().to_vec(),
        });
    }
    let projected = ops::matmul(&patches, &params.patch_proj, ctr)?;
    let biased = ops::add_bias(&projected, &params.patch_bias)?;
    ops::add(&biased, &params.pos_embed)
}

fn block_forward(
    x: &Tensor,
    block: &BlockParams,
    cfg: &ViTConfig,
    use_attention: bool,
    ctr: &mut OpCounter,
) -> Result<Tensor> {
    let acfg = cfg.attention_config();
    let mut x = x.clone();
    if use_attention {
        let attn = block.attn.as_ref().expect("validated");
        let normed = ops::layernorm(&x, &attn.ln_gamma, &attn.ln_beta, LAYERNORM_EPS)?;
        let attended = match cfg.attention_variant {
            AttentionVariant::Naive => naive_mhsa(&normed, &attn.weights, &acfg, ctr)?,
            AttentionVariant::Flash => flash_mhsa(&normed, &attn.weights, &acfg, ctr)?,
            AttentionVariant::SparseFlash => sparse_flash_mhsa(&normed, &attn.weights, &acfg, ctr)?,
        };
        x = ops::add(&x, &attended)?;
    }
    let normed = ops::layernorm(&x, &block.ffn_ln_gamma, &block.ffn_ln_beta, LAYERNORM_EPS)?;
    let hidden = ops::add_bias(&ops::matmul(&normed, &block.ffn_w1, ctr)?, &block.ffn_b1)?;
    let activated = ops::gelu(&hidden);
    let ffn = ops::add_bias(&ops::matmul(&activated, &block.ffn_w2, ctr)?, &block.ffn_b2)?;
    ops::add(&x, &ffn)
}

/// Full forward pass, recording every block output.
pub fn encode(
    volume: &Tensor,
    cfg: &ViTConfig,
    params: &EncoderParams,
    ctr: &mut OpCounter,
) -> Result<LayerOutputs> {
    params.validate_against(cfg)?;
    let mut x = patch_embed_3d(volume, cfg, params, ctr)?;
    let mut outputs = Vec::with_capacity(cfg.num_layers);
    for (i, block) in params.blocks.iter().enumerate() {
        x = block_forward(&x, block, cfg, i >= cfg.ffn_only_prefix, ctr)?;
        outputs.push(x.clone());
    }
    Ok(LayerOutputs { outputs })
}

// ---------------------------------------------------------------------------
// Taped forward for training.
// ---------------------------------------------------------------------------

pub struct AttnSublayerVars {
    pub ln_gamma: VarId,
    pub ln_beta: VarId,
    pub weights: AttentionWeightVars,
}

pub struct BlockParamVars {
    pub attn: Option<AttnSublayerVars>,
    pub ffn_ln_gamma: VarId,
    pub ffn_ln_beta: VarId,
    pub ffn_w1: VarId,
    pub ffn_b1: VarId,
    pub ffn_w2: VarId,
    pub ffn_b2: VarId,
}

pub struct EncoderParamVars {
    pub patch_proj: VarId,
    pub patch_bias: VarId,
    pub pos_embed: VarId,
    pub blocks: Vec<BlockParamVars>,
}

impl EncoderParamVars {
    /// Register every encoder parameter as a differentiable leaf, in the same
    /// order as [`EncoderParams::named_tensors`].
    pub fn register(tape: &mut Tape, params: &EncoderParams) -> Self {
        let patch_proj = tape.param(params.patch_proj.clone());
        let patch_bias = tape.param(params.patch_bias.clone());
        let pos_embed = tape.param(params.pos_embed.clone());
        let blocks = params
            .blocks
            .iter()
            .map(|b| BlockParamVars {
                attn: b.attn.as_ref().map(|a| AttnSublayerVars {
                    ln_gamma: tape.param(a.ln_gamma.clone()),
                    ln_beta: tape.param(a.ln_beta.clone()),
                    weights: AttentionWeightVars::register(tape, &a.weights),
                }),
                ffn_ln_gamma: tape.param(b.ffn_ln_gamma.clone()),
                ffn_ln_beta: tape.param(b.ffn_ln_beta.clone()),
                ffn_w1: tape.param(b.ffn_w1.clone()),
                ffn_b1: tape.param(b.ffn_b1.clone()),
                ffn_w2: tape.param(b.ffn_w2.clone()),
                ffn_b2: tape.param(b.ffn_b2.clone()),
            })
            .collect();
        EncoderParamVars {
            patch_proj,
            patch_bias,
            pos_embed,
            blocks,
        }
    }

    /// Leaf ids in [`EncoderParams::named_tensors`] order.
    pub fn ids(&self) -> Vec<VarId> {
        let mut ids = alloc::vec![self.patch_proj, self.patch_bias, self.pos_embed];
        for b in &self.blocks {
            if let Some(attn) = &b.attn {
                ids.push(attn.ln_gamma);
                ids.push(attn.ln_beta);
                ids.extend(attn.weights.ids());
            }
            ids.extend([
                b.ffn_ln_gamma,
                b.ffn_ln_beta,
                b.ffn_w1,
                b.ffn_b1,
                b.ffn_w2,
                b.ffn_b2,
            ]);
        }
        ids
    }
}

/// Taped forward pass; returns one `VarId` per block output.
pub fn encode_tape(
    tape: &mut Tape,
    volume: &Tensor,
    cfg: &ViTConfig,
    params: &EncoderParams,
    vars: &EncoderParamVars,
) -> Result<Vec<VarId>> {
    params.validate_against(cfg)?;
    let acfg = cfg.attention_config();
    let patches = tape.constant(patchify(volume, cfg.patch_size)?);
    let projected = tape.matmul(patches, vars.patch_proj)?;
    let biased = tape.add_bias(projected, vars.patch_bias)?;
    let mut x = tape.add(biased, vars.pos_embed)?;
    let mut outputs = Vec::with_capacity(cfg.num_layers);
    for (i, block) in vars.blocks.iter().enumerate() {
        if i >= cfg.ffn_only_prefix {
            let attn = block.attn.as_ref().expect("validated");
            let normed = tape.layernorm(x, attn.ln_gamma, attn.ln_beta, LAYERNORM_EPS)?;
            let attended = match cfg.attention_variant {
                AttentionVariant::Naive => naive_mhsa_tape(tape, normed, &attn.weights, &acfg)?,
                AttentionVariant::Flash => flash_mhsa_tape(tape, normed, &attn.weights, &acfg)?,
                AttentionVariant::SparseFlash => {
                    sparse_flash_mhsa_tape(tape, normed, &attn.weights, &acfg)?
                }
            };
            x = tape.add(x, attended)?;
        }
        let normed = tape.layernorm(x, block.ffn_ln_gamma, block.ffn_ln_beta, LAYERNORM_EPS)?;
        let h1 = tape.matmul(normed, block.ffn_w1)?;
        let h1b = tape.add_bias(h1, block.ffn_b1)?;
        let act = tape.gelu(h1b);
        let h2 = tape.matmul(act, block.ffn_w2)?;
        let h2b = tape.add_bias(h2, block.ffn_b2)?;
        x = tape.add(x, h2b)?;
        outputs.push(x);
    }
    Ok(outputs)
}
