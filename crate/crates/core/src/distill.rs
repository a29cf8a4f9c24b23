//! Layer-wise progressive distillation followed by logit-level distillation.
//!
//! The student's block `i` output is pulled toward the teacher's block `2i`
//! output for the first `k` pairs, with `k` growing over training:
//! `k = ceil(current * 6 / total)`. Once the layer-wise schedule finishes, a
//! configurable number of logit iterations matches final outputs only.
//! Optimization is plain bias-corrected Adam at a single learning rate.
//!
//! Wall-clock time is injected as a millisecond closure so the crate stays
//! no_std; the companion crate passes a monotonic clock and tests pass a
//! counter or `|| 0.0`.

use crate::encoder::{
    encode, encode_tape, EncoderParamVars, EncoderParams, LayerOutputs, ViTConfig,
};
use crate::error::{Error, Result};
use crate::ops;
use crate::rng::Rng;
use crate::tape::{Tape, VarId};
use crate::tensor::Tensor;
use crate::OpCounter;
use alloc::format;
use alloc::vec::Vec;

/// How a layer-difference norm is scaled.
///
/// `PlainL2` is the direct per-sample L2 norm of the flattened difference.
/// `Rms` divides each norm by `sqrt(numel)` so the loss does not scale with
/// token count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NormMode {
    #[default]
    PlainL2,
    Rms,
}

impl NormMode {
    pub fn parse(label: &str) -> Result<Self> {
        match label {
            "plain_l2" | "plain-l2" => Ok(NormMode::PlainL2),
            "rms" => Ok(NormMode::Rms),
            other => Err(Error::UnknownLabel {
                what: "norm mode",
                got: alloc::string::ToString::to_string(other),
            }),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            NormMode::PlainL2 => "plain_l2",
            NormMode::Rms => "rms",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Layerwise,
    Logit,
}

impl Phase {
    pub fn label(&self) -> &'static str {
        match self {
            Phase::Layerwise => "layerwise",
            Phase::Logit => "logit",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistillConfig {
    pub total_iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub adam_eps: f32,
    pub logit_phase_iterations: usize,
    pub seed: u64,
    pub norm_mode: NormMode,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            total_iterations: 36,
            batch_size: 16,
            learning_rate: 5e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            logit_phase_iterations: 12,
            seed: 42,
            norm_mode: NormMode::PlainL2,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self, student_layers: usize) -> Result<()> {
        if self.total_iterations < student_layers {
            return Err(Error::InvalidConfig {
                detail: format!(
                    "total_iterations {} must be >= student layer count {student_layers} \
                     so the schedule reaches every layer pair",
                    self.total_iterations
                ),
            });
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig {
                detail: "batch_size must be >= 1".into(),
            });
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::InvalidConfig {
                detail: "learning_rate must be positive and finite".into(),
            });
        }
        Ok(())
    }
}

fn schedule_stages(current: usize, total: usize, stages: usize) -> Result<usize> {
    if current == 0 || current > total {
        return Err(Error::IterationOutOfRange { current, total });
    }
    Ok((current * stages).div_ceil(total))
}

/// `k = ceil(current * 6 / total)` for 1-based `current`.
pub fn schedule_k(current_iteration: usize, total_iterations: usize) -> Result<usize> {
    schedule_stages(current_iteration, total_iterations, 6)
}

fn norm_value(diff_sumsq: f32, numel: usize, mode: NormMode) -> f32 {
    match mode {
        NormMode::PlainL2 => libm::sqrtf(diff_sumsq),
        NormMode::Rms => libm::sqrtf(diff_sumsq / numel as f32),
    }
}

fn check_layer_pairs(teacher_layers: usize, student_layers: usize) -> Result<()> {
    if teacher_layers != 2 * student_layers {
        return Err(Error::InvalidConfig {
            detail: format!(
                "teacher has {teacher_layers} layers, expected exactly twice the \
                 student's {student_layers}"
            ),
        });
    }
    Ok(())
}

/// Batch-mean of `(1/k) * sum_{i=1..k} ||teacher[2i] - student[i]||`.
///
/// `teacher_batch[s]` and `student_batch[s]` are the per-layer outputs for
/// sample `s`. Layer indices are 1-based in the formula; the teacher match
/// for student layer `i` is teacher block `2i`.
pub fn layerwise_loss(
    teacher_batch: &[LayerOutputs],
    student_batch: &[LayerOutputs],
    k: usize,
    mode: NormMode,
) -> Result<f32> {
    if teacher_batch.is_empty() || teacher_batch.len() != student_batch.len() {
        return Err(Error::InvalidConfig {
            detail: "layerwise_loss needs equal, non-empty teacher/student batches".into(),
        });
    }
    let student_layers = student_batch[0].len();
    check_layer_pairs(teacher_batch[0].len(), student_layers)?;
    if k == 0 || k > student_layers {
        return Err(Error::InvalidConfig {
            detail: format!("k = {k} outside 1..={student_layers}"),
        });
    }
    let mut total = 0.0f32;
    for (t_outs, s_outs) in teacher_batch.iter().zip(student_batch) {
        for i in 1..=k {
            let t = t_outs.get(2 * i - 1);
            let s = s_outs.get(i - 1);
            let diff = ops::sub(t, s)?;
            total += norm_value(ops::sumsq(&diff).item()?, diff.numel(), mode) / k as f32;
        }
    }
    Ok(total / teacher_batch.len() as f32)
}

/// Batch-mean L2 norm between final encoder outputs.
pub fn logit_loss(
    teacher_finals: &[&Tensor],
    student_finals: &[&Tensor],
    mode: NormMode,
) -> Result<f32> {
    if teacher_finals.is_empty() || teacher_finals.len() != student_finals.len() {
        return Err(Error::InvalidConfig {
            detail: "logit_loss needs equal, non-empty teacher/student batches".into(),
        });
    }
    let mut total = 0.0f32;
    for (t, s) in teacher_finals.iter().zip(student_finals) {
        let diff = ops::sub(t, s)?;
        total += norm_value(ops::sumsq(&diff).item()?, diff.numel(), mode);
    }
    Ok(total / teacher_finals.len() as f32)
}

fn norm_tape(tape: &mut Tape, diff: VarId, mode: NormMode) -> VarId {
    let ss = tape.sumsq(diff);
    let scaled = match mode {
        NormMode::PlainL2 => ss,
        NormMode::Rms => {
            let numel = tape.value(diff).numel();
            tape.scale(ss, 1.0 / numel as f32)
        }
    };
    tape.sqrt(scaled)
}

/// Differentiable single-sample layer-wise loss. Teacher outputs enter as
/// constants; `student_ids` are the taped block outputs.
pub fn layerwise_loss_tape(
    tape: &mut Tape,
    teacher_outs: &LayerOutputs,
    student_ids: &[VarId],
    k: usize,
    mode: NormMode,
) -> Result<VarId> {
    check_layer_pairs(teacher_outs.len(), student_ids.len())?;
    if k == 0 || k > student_ids.len() {
        return Err(Error::InvalidConfig {
            detail: format!("k = {k} outside 1..={}", student_ids.len()),
        });
    }
    let mut acc: Option<VarId> = None;
    for i in 1..=k {
        let t = tape.constant(teacher_outs.get(2 * i - 1).clone());
        let diff = tape.sub(t, student_ids[i - 1])?;
        let n = norm_tape(tape, diff, mode);
        acc = Some(match acc {
            Some(prev) => tape.add(prev, n)?,
            None => n,
        });
    }
    Ok(tape.scale(acc.expect("k >= 1"), 1.0 / k as f32))
}

/// Differentiable single-sample logit loss.
pub fn logit_loss_tape(
    tape: &mut Tape,
    teacher_final: &Tensor,
    student_final: VarId,
    mode: NormMode,
) -> Result<VarId> {
    let t = tape.constant(teacher_final.clone());
    let diff = tape.sub(t, student_final)?;
    Ok(norm_tape(tape, diff, mode))
}

/// First and second moment estimates, one pair per parameter tensor, in
/// [`EncoderParams::named_tensors`] order.
#[derive(Debug, Clone)]
pub struct AdamState {
    first_moment: Vec<Tensor>,
    second_moment: Vec<Tensor>,
    step: u64,
}

impl AdamState {
    pub fn for_tensors<'a>(tensors: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let zeros: Vec<Tensor> = tensors
            .into_iter()
            .map(|t| Tensor::zeros(t.shape()))
            .collect();
        AdamState {
            first_moment: zeros.clone(),
            second_moment: zeros,
            step: 0,
        }
    }

    pub fn for_params(params: &EncoderParams) -> Self {
        Self::for_tensors(params.named_tensors().into_iter().map(|(_, t)| t))
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update. `params` and `grads` must align with the
/// state's parameter order.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    cfg: &DistillConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return Err(Error::InvalidConfig {
            detail: format!(
                "adam_step alignment: {} params, {} grads, {} moment slots",
                params.len(),
                grads.len(),
                state.first_moment.len()
            ),
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - libm::powf(cfg.beta1, t as f32);
    let bias2 = 1.0 - libm::powf(cfg.beta2, t as f32);
    for ((param, grad), (m, v)) in params.iter_mut().zip(grads).zip(
        state
            .first_moment
            .iter_mut()
            .zip(state.second_moment.iter_mut()),
    ) {
        if param.shape() != grad.shape() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                left: param.shape().to_vec(),
                right: grad.shape().to_vec(),
            });
        }
        let pd = param.data_mut();
        let md = m.data_mut();
        let vd = v.data_mut();
        for i in 0..pd.len() {
            let g = grad.data()[i];
            md[i] = cfg.beta1 * md[i] + (1.0 - cfg.beta1) * g;
            vd[i] = cfg.beta2 * vd[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = md[i] / bias1;
            let v_hat = vd[i] / bias2;
            pd[i] -= cfg.learning_rate * m_hat / (libm::sqrtf(v_hat) + cfg.adam_eps);
        }
    }
    Ok(())
}

/// Seeded Gaussian noise plus a few random low-frequency 3D cosines, so the
/// encoders see structured, non-degenerate inputs.
pub fn synthetic_volume(extent: usize, rng: &mut Rng) -> Tensor {
    const COSINES: usize = 3;
    const NOISE_STD: f32 = 0.3;
    let mut waves = [(0.0f32, 0.0f32, 0.0f32, 0.0f32, 0.0f32); COSINES];
    for wave in waves.iter_mut() {
        let fx = (rng.next_below(4) + 1) as f32;
        let fy = (rng.next_below(4) + 1) as f32;
        let fz = (rng.next_below(4) + 1) as f32;
        let amp = 0.5 + 0.5 * rng.next_f32();
        let phase = core::f32::consts::TAU * rng.next_f32();
        *wave = (fx, fy, fz, amp, phase);
    }
    let inv = core::f32::consts::TAU / extent as f32;
    let mut data = Vec::with_capacity(extent * extent * extent);
    for z in 0..extent {
        for y in 0..extent {
            for x in 0..extent {
                let mut value = NOISE_STD * rng.normal();
                for &(fx, fy, fz, amp, phase) in &waves {
                    value += amp
                        * libm::cosf(inv * (fx * x as f32 + fy * y as f32 + fz * z as f32) + phase);
                }
                data.push(value);
            }
        }
    }
    Tensor::from_vec(alloc::vec![extent, extent, extent], data).expect("consistent shape")
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRecord {
    pub iteration: usize,
    pub phase: Phase,
    pub k: usize,
    pub loss: f32,
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<TrainRecord>,
}

impl TrainHistory {
    pub fn layerwise_records(&self) -> impl Iterator<Item = &TrainRecord> {
        self.records.iter().filter(|r| r.phase == Phase::Layerwise)
    }

    pub fn logit_records(&self) -> impl Iterator<Item = &TrainRecord> {
        self.records.iter().filter(|r| r.phase == Phase::Logit)
    }
}

#[derive(Debug)]
pub struct DistillOutcome {
    pub student: EncoderParams,
    pub history: TrainHistory,
    /// Flops and scratch accounting accumulated over the whole run.
    pub counter: OpCounter,
}

struct SampleGrads {
    loss: f32,
    grads: Vec<Tensor>,
}

fn student_sample_pass(
    volume: &Tensor,
    teacher_outs: &LayerOutputs,
    student_cfg: &ViTConfig,
    student: &EncoderParams,
    k_or_logit: Option<usize>,
    mode: NormMode,
    ctr: &mut OpCounter,
) -> Result<SampleGrads> {
    let mut tape = Tape::new();
    let vars = EncoderParamVars::register(&mut tape, student);
    let ids = vars.ids();
    let outs = encode_tape(&mut tape, volume, student_cfg, student, &vars)?;
    let loss_id = match k_or_logit {
        Some(k) => layerwise_loss_tape(&mut tape, teacher_outs, &outs, k, mode)?,
        None => logit_loss_tape(
            &mut tape,
            teacher_outs.final_output(),
            *outs.last().expect("num_layers >= 1"),
            mode,
        )?,
    };
    let loss = tape.value(loss_id).item()?;
    let mut grad_map = tape.backward(loss_id)?;
    let grads = ids
        .iter()
        .map(|id| grad_map.remove(id).expect("registered leaf"))
        .collect();
    // Fold this sample's counted work into the run-level counter.
    ctr.add_flops(tape.counter.flops());
    Ok(SampleGrads { loss, grads })
}

/// Run the full two-phase distillation. The teacher is borrowed immutably
/// and never changes; the student is consumed and returned trained.
///
/// `now_ms` supplies monotonic milliseconds for the per-iteration timing
/// column; pass `|| 0.0` when timing is irrelevant.
pub fn distill_train(
    teacher_cfg: &ViTConfig,
    teacher: &EncoderParams,
    student_cfg: &ViTConfig,
    mut student: EncoderParams,
    cfg: &DistillConfig,
    now_ms: &mut dyn FnMut() -> f64,
) -> Result<DistillOutcome> {
    check_layer_pairs(teacher_cfg.num_layers, student_cfg.num_layers)?;
    if teacher_cfg.embed_dim != student_cfg.embed_dim
        || teacher_cfg.input_extent != student_cfg.input_extent
        || teacher_cfg.patch_size != student_cfg.patch_size
    {
        return Err(Error::InvalidConfig {
            detail: "teacher and student must share input extent, patch size, and width".into(),
        });
    }
    cfg.validate(student_cfg.num_layers)?;

    let stages = student_cfg.num_layers;
    let data_rng = Rng::new(cfg.seed);
    let mut counter = OpCounter::new();
    let mut adam = AdamState::for_params(&student);
    let mut history = TrainHistory::default();
    let total = cfg.total_iterations + cfg.logit_phase_iterations;

    for iteration in 1..=total {
        let started = now_ms();
        let layerwise = iteration <= cfg.total_iterations;
        let k = if layerwise {
            schedule_stages(iteration, cfg.total_iterations, stages)?
        } else {
            stages
        };

        let mut batch_loss = 0.0f32;
        let mut batch_grads: Option<Vec<Tensor>> = None;
        for sample in 0..cfg.batch_size {
            let tag = (iteration as u64) << 20 | sample as u64;
            let mut vol_rng = data_rng.derive(tag);
            let volume = synthetic_volume(teacher_cfg.input_extent, &mut vol_rng);
            let teacher_outs = encode(&volume, teacher_cfg, teacher, &mut counter)?;
            let pass = student_sample_pass(
                &volume,
                &teacher_outs,
                student_cfg,
                &student,
                layerwise.then_some(k),
                cfg.norm_mode,
                &mut counter,
            )?;
            batch_loss += pass.loss;
            batch_grads = Some(match batch_grads {
                None => pass.grads,
                Some(mut acc) => {
                    for (a, g) in acc.iter_mut().zip(&pass.grads) {
                        *a = ops::add(a, g)?;
                    }
                    acc
                }
            });
        }

        let loss = batch_loss / cfg.batch_size as f32;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { iteration });
        }
        let grads: Vec<Tensor> = batch_grads
            .expect("batch_size >= 1")
            .into_iter()
            .map(|g| ops::scale(&g, 1.0 / cfg.batch_size as f32))
            .collect();
        adam_step(&mut student.tensors_mut(), &grads, &mut adam, cfg)?;

        history.records.push(TrainRecord {
            iteration,
            phase: if layerwise {
                Phase::Layerwise
            } else {
                Phase::Logit
            },
            k,
            loss,
            elapsed_ms: now_ms() - started,
        });
    }

    Ok(DistillOutcome {
        student,
        history,
        counter,
    })
}
