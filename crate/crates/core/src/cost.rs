//! Analytic FLOP model for attention operators and full encoders.
//!
//! The model counts the same work the [`crate::counter::OpCounter`] counts —
//! matmul multiply-adds at 2 flops each — so measured and analytic values
//! agree exactly, not approximately. Per block:
//!
//! - projections: `8 * N * d^2` (four `d x d` maps over `N` tokens)
//! - dense attention core: `4 * N^2 * d` (scores plus weighted sum)
//! - sparse attention core: `4 * N * w * d` (the dense term scaled by `w/N`)
//! - FFN: `2 * ffn_ratio * 2 * N * d^2`
//!
//! FFN-only blocks drop both attention terms. Patch embedding adds
//! `2 * N * p^3 * d`.

use crate::encoder::{AttentionVariant, ViTConfig};
use crate::error::{Error, Result};

/// Flop totals split by where the work happens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FlopBreakdown {
    pub patch_embed: u64,
    pub attn_projections: u64,
    pub attn_core: u64,
    pub ffn: u64,
}

impl FlopBreakdown {
    pub fn total(&self) -> u64 {
        self.patch_embed + self.attn_projections + self.attn_core + self.ffn
    }
}

/// Everything the cost model needs about one configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CostInputs {
    pub variant: AttentionVariant,
    pub token_count: usize,
    pub embed_dim: usize,
    pub num_heads: usize,
    pub segment_size: usize,
    pub dilation_interval: usize,
    /// FFN hidden ratio; 0 means the configuration has no FFN (bare
    /// attention operator).
    pub ffn_hidden_ratio: usize,
    pub num_layers: usize,
    pub ffn_only_prefix: usize,
    /// Flattened patch length `p^3`; 0 when there is no patch embedding.
    pub patch_dim: usize,
}

impl CostInputs {
    pub fn from_vit(cfg: &ViTConfig) -> Self {
        CostInputs {
            variant: cfg.attention_variant,
            token_count: cfg.token_count(),
            embed_dim: cfg.embed_dim,
            num_heads: cfg.num_heads,
            segment_size: cfg.segment_size,
            dilation_interval: cfg.dilation_interval,
            ffn_hidden_ratio: cfg.ffn_hidden_ratio,
            num_layers: cfg.num_layers,
            ffn_only_prefix: cfg.ffn_only_prefix,
            patch_dim: cfg.patch_dim(),
        }
    }

    /// A bare attention operator: one layer, no FFN, no patch embedding.
    pub fn mhsa_only(
        variant: AttentionVariant,
        token_count: usize,
        embed_dim: usize,
        num_heads: usize,
        segment_size: usize,
        dilation_interval: usize,
    ) -> Self {
        CostInputs {
            variant,
            token_count,
            embed_dim,
            num_heads,
            segment_size,
            dilation_interval,
            ffn_hidden_ratio: 0,
            num_layers: 1,
            ffn_only_prefix: 0,
            patch_dim: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.embed_dim == 0
            || self.num_heads == 0
            || !self.embed_dim.is_multiple_of(self.num_heads)
            || self.token_count == 0
            || self.num_layers == 0
        {
            return Err(Error::InvalidConfig {
                detail: alloc::format!("cost model inputs are degenerate: {self:?}"),
            });
        }
        if self.ffn_only_prefix > self.num_layers {
            return Err(Error::InvalidConfig {
                detail: "ffn_only_prefix exceeds num_layers".into(),
            });
        }
        if self.variant == AttentionVariant::SparseFlash {
            let (n, w, r) = (self.token_count, self.segment_size, self.dilation_interval);
            if w == 0 || r == 0 || n % (w * r) != 0 {
                return Err(Error::SegmentDivisibility { n, w, r });
            }
        }
        Ok(())
    }
}

/// Core-attention flops for one layer of the given variant.
fn core_flops(inp: &CostInputs) -> u64 {
    let n = inp.token_count as u64;
    let d = inp.embed_dim as u64;
    match inp.variant {
        AttentionVariant::Naive | AttentionVariant::Flash => 4 * n * n * d,
        AttentionVariant::SparseFlash => 4 * n * inp.segment_size as u64 * d,
    }
}

/// Exact flop count for a configuration; matches the instrumented counter.
pub fn analytic_flops(inp: &CostInputs) -> Result<FlopBreakdown> {
    inp.validate()?;
    let n = inp.token_count as u64;
    let d = inp.embed_dim as u64;
    let attn_layers = (inp.num_layers - inp.ffn_only_prefix) as u64;
    Ok(FlopBreakdown {
        patch_embed: 2 * n * inp.patch_dim as u64 * d,
        attn_projections: attn_layers * 8 * n * d * d,
        attn_core: attn_layers * core_flops(inp),
        ffn: inp.num_layers as u64 * 4 * inp.ffn_hidden_ratio as u64 * n * d * d,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::{
        flash_mhsa, naive_mhsa, sparse_flash_mhsa, AttentionConfig, AttentionWeights,
    };
    use crate::encoder::{encode, make_student_config, EncoderParams, PresetScale};
    use crate::rng::Rng;
    use crate::OpCounter;

    #[test]
    fn dense_core_term_at_single_token_is_4d() {
        let inp = CostInputs::mhsa_only(AttentionVariant::Naive, 1, 16, 1, 1, 1);
        let flops = analytic_flops(&inp).unwrap();
        assert_eq!(flops.attn_core, 4 * 16);
    }

    #[test]
    fn sparse_over_dense_core_ratio_is_w_over_n() {
        let dense = analytic_flops(&CostInputs::mhsa_only(
            AttentionVariant::Flash,
            512,
            64,
            4,
            1,
            1,
        ))
        .unwrap();
        let sparse = analytic_flops(&CostInputs::mhsa_only(
            AttentionVariant::SparseFlash,
            512,
            64,
            4,
            64,
            2,
        ))
        .unwrap();
        // 64/512 == 1/8, checked in integers.
        assert_eq!(sparse.attn_core * 8, dense.attn_core);
    }

    #[test]
    fn sparse_inputs_must_divide() {
        let inp = CostInputs::mhsa_only(AttentionVariant::SparseFlash, 100, 32, 4, 8, 3);
        assert!(matches!(
            analytic_flops(&inp),
            Err(Error::SegmentDivisibility { n: 100, w: 8, r: 3 })
        ));
    }

    #[test]
    fn mhsa_counters_match_the_model_exactly() {
        let (n, d, h, w, r) = (64, 16, 4, 8, 2);
        let x = Rng::new(1).normal_tensor(&[n, d], 1.0);
        let wts = AttentionWeights::seeded(d, &mut Rng::new(2));
        let acfg = AttentionConfig::new(d, h).with_segments(w, r);

        type Runner = fn(
            &crate::Tensor,
            &AttentionWeights,
            &AttentionConfig,
            &mut OpCounter,
        ) -> crate::Result<crate::Tensor>;
        for (variant, runner) in [
            (AttentionVariant::Naive, naive_mhsa as Runner),
            (AttentionVariant::Flash, flash_mhsa as Runner),
            (AttentionVariant::SparseFlash, sparse_flash_mhsa as Runner),
        ] {
            let mut ctr = OpCounter::new();
            runner(&x, &wts, &acfg, &mut ctr).unwrap();
            let model = analytic_flops(&CostInputs::mhsa_only(variant, n, d, h, w, r)).unwrap();
            assert_eq!(ctr.flops(), model.total(), "{variant:?} total");
            assert_eq!(ctr.attn_core_flops(), model.attn_core, "{variant:?} core");
        }
    }

    #[test]
    fn encoder_counter_matches_the_model_exactly() {
        let cfg = make_student_config(PresetScale::Toy);
        let params = EncoderParams::seeded(&cfg, &mut Rng::new(3)).unwrap();
        let volume = Rng::new(4).normal_tensor(&[32, 32, 32], 1.0);
        let mut ctr = OpCounter::new();
        encode(&volume, &cfg, &params, &mut ctr).unwrap();
        let model = analytic_flops(&CostInputs::from_vit(&cfg)).unwrap();
        assert_eq!(ctr.flops(), model.total());
        assert_eq!(ctr.attn_core_flops(), model.attn_core);
    }
}
