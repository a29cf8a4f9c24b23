//! The `distill` command: build a seeded teacher/student pair at the chosen
//! scale, run layer-wise then logit distillation, and persist the history
//! and checkpoints.

use crate::checkpoint::save_encoder;
use crate::history::write_history;
use crate::report::{write_manifest, Manifest};
use anyhow::{Context, Result};
use std::path::PathBuf;
use std::time::Instant;
use voxtr_core::distill::{distill_train, DistillConfig, NormMode, TrainHistory};
use voxtr_core::encoder::{
    make_student_config, make_teacher_config, AttentionVariant, EncoderParams, PresetScale,
};
use voxtr_core::Rng;

pub struct DistillCmdOptions {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub scale: PresetScale,
    pub iterations: usize,
    pub logit_iterations: usize,
    pub batch: usize,
    pub learning_rate: f32,
    pub w: Option<usize>,
    pub r: Option<usize>,
    pub tiles: Option<(usize, usize)>,
    pub student_variant: Option<AttentionVariant>,
    pub norm_mode: NormMode,
    pub parallelism: usize,
}

pub struct DistillSummary {
    pub history: TrainHistory,
    pub teacher_fingerprint: u64,
    pub student_fingerprint: u64,
    pub wall_seconds: f64,
}

// Student init must differ from the teacher's stream.
const STUDENT_SEED_SALT: u64 = 0x5EED;

pub fn run(opts: &DistillCmdOptions) -> Result<DistillSummary> {
    std::fs::create_dir_all(&opts.out_dir)?;
    if opts.scale == PresetScale::Paper {
        eprintln!(
            "note: paper-shape distillation runs 512-token, 768-wide encoders on the CPU; \
             expect hours. The toy scale exercises the same mechanisms in under a minute."
        );
    }
    let teacher_cfg = make_teacher_config(opts.scale);
    let mut student_cfg = make_student_config(opts.scale);
    if let Some(w) = opts.w {
        student_cfg.segment_size = w;
    }
    if let Some(r) = opts.r {
        student_cfg.dilation_interval = r;
    }
    if let Some((br, bc)) = opts.tiles {
        student_cfg.tile_rows = br;
        student_cfg.tile_cols = bc;
    }
    if let Some(variant) = opts.student_variant {
        student_cfg.attention_variant = variant;
    }
    student_cfg
        .validate()
        .context("student overrides produce an invalid config")?;

    let teacher = EncoderParams::seeded(&teacher_cfg, &mut Rng::new(opts.seed))?;
    let student =
        EncoderParams::seeded(&student_cfg, &mut Rng::new(opts.seed ^ STUDENT_SEED_SALT))?;
    let teacher_fingerprint_before = teacher.fingerprint();

    let cfg = DistillConfig {
        total_iterations: opts.iterations,
        batch_size: opts.batch,
        learning_rate: opts.learning_rate,
        logit_phase_iterations: opts.logit_iterations,
        seed: opts.seed,
        norm_mode: opts.norm_mode,
        ..DistillConfig::default()
    };

    let started = Instant::now();
    let mut clock = move || started.elapsed().as_secs_f64() * 1e3;
    let t0 = Instant::now();
    let outcome = distill_train(
        &teacher_cfg,
        &teacher,
        &student_cfg,
        student,
        &cfg,
        &mut clock,
    )?;
    let wall_seconds = t0.elapsed().as_secs_f64();

    write_manifest(
        &opts.out_dir,
        &Manifest {
            command: "distill".to_string(),
            seed: opts.seed,
            scale: opts.scale.label().to_string(),
            parallelism: opts.parallelism,
            config: serde_json::json!({
                "iterations": opts.iterations,
                "logit_iterations": opts.logit_iterations,
                "batch": opts.batch,
                "learning_rate": opts.learning_rate,
                "norm_mode": opts.norm_mode.label(),
                "student_variant": student_cfg.attention_variant.label(),
                "w": student_cfg.segment_size,
                "r": student_cfg.dilation_interval,
                "tiles": [student_cfg.tile_rows, student_cfg.tile_cols],
                "teacher_layers": teacher_cfg.num_layers,
                "student_layers": student_cfg.num_layers,
                "ffn_only_prefix": student_cfg.ffn_only_prefix,
            }),
        },
    )?;
    write_history(&opts.out_dir.join("history.jsonl"), &outcome.history)?;
    save_encoder(&opts.out_dir.join("teacher.ckpt"), &teacher)?;
    save_encoder(&opts.out_dir.join("student.ckpt"), &outcome.student)?;

    assert_eq!(
        teacher.fingerprint(),
        teacher_fingerprint_before,
        "teacher parameters must not change during distillation"
    );

    Ok(DistillSummary {
        history: outcome.history,
        teacher_fingerprint: teacher_fingerprint_before,
        student_fingerprint: outcome.student.fingerprint(),
        wall_seconds,
    })
}
