//! Teacher-student training.
//!
//! Each step feeds one (style-transferred) labeled source slice and one
//! unlabeled target slice. The student minimizes
//! `dice + lambda(p) * consistency + entropy`; the teacher follows the
//! student by exponential moving average and never receives gradients.

pub mod config;
pub mod losses;

use std::io::Write;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use config::{
    Ablation, CgftdaMode, ElasticSettings, EntropySource, RampForm, Seeds, TrainConfig,
};
pub use losses::{consistency_loss, dice_loss, entropy_loss, EntropyForm, LossGrad, Reduction};

use crate::elastic::{make_displacement, warp, DisplacementField, ElasticParams, Interp};
use crate::error::{Error, Result};
use crate::fourier::transfer_style;
use crate::segnet::{
    adam_step, backward_into, ema_update, forward, init_params, predict, AdamState, NetParams,
    ParamGrads,
};
use crate::slice::{MaskSlice, Slice};

/// SplitMix64 finalizer over `a ^ b`, used to derive independent streams.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = (a ^ b.rotate_left(32)).wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// `lambda_max * exp(-ramp_coeff * (1 - p)^2)`, non-decreasing in `p`.
pub fn lambda_schedule(p: f64, lambda_max: f64, ramp_coeff: f64) -> f64 {
    let p = p.clamp(0.0, 1.0);
    lambda_max * (-ramp_coeff * (1.0 - p) * (1.0 - p)).exp()
}

/// Consistency weight for training progress `p` under `config`.
pub fn consistency_weight(config: &TrainConfig, p: f64) -> f64 {
    match config.ramp_form {
        RampForm::Exponential => lambda_schedule(p, config.lambda_max, config.ramp_coeff),
        RampForm::Scientific => {
            let q = 1.0 - p.clamp(0.0, 1.0);
            config.lambda_max * 1e-5 * q * q
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub student: NetParams,
    pub teacher: NetParams,
    pub opt: AdamState,
    /// Optimizer steps taken so far.
    pub step: u64,
    pub completed_epochs: usize,
    pub total_epochs: usize,
}

impl TrainState {
    /// Student initialized from `seeds.net`; the teacher starts as an exact copy.
    pub fn new(config: &TrainConfig) -> Result<Self> {
        let student = init_params(config.net, config.seeds.net)?;
        let opt = AdamState::new(&student, config.lr, config.weight_decay);
        Ok(Self {
            teacher: student.clone(),
            student,
            opt,
            step: 0,
            completed_epochs: 0,
            total_epochs: config.epochs,
        })
    }

    /// Epoch progress `completed / total` in `[0, 1]`.
    pub fn progress(&self) -> f64 {
        if self.total_epochs == 0 {
            return 1.0;
        }
        (self.completed_epochs as f64 / self.total_epochs as f64).clamp(0.0, 1.0)
    }
}

/// Multipliers applied to each loss term when forming the objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TermWeights {
    pub dice: f64,
    pub con: f64,
    pub ent: f64,
}

/// Loss values for one step (or batch mean).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    pub dice: f64,
    pub con: f64,
    pub ent: f64,
    pub lambda: f64,
    /// `dice + lambda * con + entropy_weight * ent`
    pub total: f64,
}

/// One training pair: a labeled source image and an unlabeled target image.
#[derive(Debug, Clone, Copy)]
pub struct StepInput<'a> {
    pub source: ArrayView2<'a, f64>,
    pub mask: &'a MaskSlice,
    pub target: ArrayView2<'a, f64>,
}

/// Loss terms and the student gradient of
/// `w.dice * dice + w.con * con + w.ent * ent`.
///
/// Terms disabled by `config.ablation` are reported as zero. The teacher
/// branch is evaluated without recording, so it contributes no gradient.
pub fn student_objective(
    student: &NetParams,
    teacher: &NetParams,
    input: StepInput<'_>,
    field: &DisplacementField,
    config: &TrainConfig,
    weights: TermWeights,
) -> Result<(StepLosses, ParamGrads)> {
    let mut grads = ParamGrads::zeros_like(student);
    let losses = accumulate_objective(student, teacher, input, field, config, weights, 1.0, &mut grads)?;
    Ok((losses, grads))
}

#[allow(clippy::too_many_arguments)]
fn accumulate_objective(
    student: &NetParams,
    teacher: &NetParams,
    input: StepInput<'_>,
    field: &DisplacementField,
    config: &TrainConfig,
    weights: TermWeights,
    scale: f64,
    grads: &mut ParamGrads,
) -> Result<StepLosses> {
    let ab = config.ablation;
    let (p_src, cache_src) = forward(student, input.source)?;
    let dice = dice_loss(p_src.view(), input.mask, config.dice_eps)?;
    let up = dice.grad.mapv(|g| g * weights.dice * scale);
    backward_into(student, &cache_src, up.view(), grads)?;

    let mut con_value = 0.0;
    let mut ent_value = 0.0;
    if ab.uses_target() {
        let warped = warp(input.target, field, Interp::Bilinear)?;
        let (q, cache_q) = forward(student, warped.view())?;
        let mut up = Array2::<f64>::zeros(q.dim());
        if ab.use_consistency {
            let t_out = predict(teacher, input.target)?;
            let t_warped = warp(t_out.view(), field, Interp::Bilinear)?;
            let con = consistency_loss(q.view(), t_warped.view(), config.consistency_reduction)?;
            con_value = con.value;
            up.scaled_add(weights.con * scale, &con.grad);
        }
        if ab.use_entropy {
            match config.entropy_source {
                EntropySource::Student => {
                    let ent = entropy_loss(q.view(), config.entropy_form);
                    ent_value = ent.value;
                    up.scaled_add(weights.ent * scale, &ent.grad);
                }
                EntropySource::Teacher => {
                    let t_out = predict(teacher, input.target)?;
                    ent_value = entropy_loss(t_out.view(), config.entropy_form).value;
                }
            }
        }
        backward_into(student, &cache_q, up.view(), grads)?;
    }
    Ok(StepLosses {
        dice: dice.value,
        con: con_value,
        ent: ent_value,
        lambda: weights.con,
        total: weights.dice * dice.value + weights.con * con_value + weights.ent * ent_value,
    })
}

/// One optimizer step over a batch, followed by the EMA teacher update.
pub fn train_batch(
    state: &mut TrainState,
    batch: &[(StepInput<'_>, ElasticParams)],
    config: &TrainConfig,
) -> Result<StepLosses> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let lambda = consistency_weight(config, state.progress());
    let weights = TermWeights {
        dice: 1.0,
        con: lambda,
        ent: config.entropy_weight,
    };
    let scale = 1.0 / batch.len() as f64;
    let (h, w) = config.net.input_size;
    let mut grads = ParamGrads::zeros_like(&state.student);
    let mut sum = StepLosses {
        dice: 0.0,
        con: 0.0,
        ent: 0.0,
        lambda,
        total: 0.0,
    };
    for (input, tau) in batch {
        let field = if config.ablation.uses_target() {
            make_displacement(h, w, tau)?
        } else {
            DisplacementField::zeros(h, w)
        };
        let l = accumulate_objective(
            &state.student,
            &state.teacher,
            *input,
            &field,
            config,
            weights,
            scale,
            &mut grads,
        )?;
        sum.dice += l.dice * scale;
        sum.con += l.con * scale;
        sum.ent += l.ent * scale;
    }
    sum.total = sum.dice + lambda * sum.con + config.entropy_weight * sum.ent;
    if !sum.total.is_finite() || grads.values().iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteLoss {
            step: state.step + 1,
            dice: sum.dice,
            con: sum.con,
            ent: sum.ent,
        });
    }
    adam_step(&mut state.student, &grads, &mut state.opt)?;
    ema_update(&mut state.teacher, &state.student, config.beta)?;
    state.step += 1;
    Ok(sum)
}

/// Single-pair convenience wrapper around [`train_batch`].
pub fn train_step(
    state: &mut TrainState,
    input: StepInput<'_>,
    tau: ElasticParams,
    config: &TrainConfig,
) -> Result<StepLosses> {
    train_batch(state, &[(input, tau)], config)
}

/// Visiting order for one epoch: `max(n_src, n_tgt)` pairs of indices, each
/// stream shuffled independently and wrapped around when shorter.
pub fn epoch_order(data_seed: u64, epoch: usize, n_src: usize, n_tgt: usize) -> Vec<(usize, usize)> {
    let shuffled = |n: usize, stream: u64| {
        let mut idx: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(data_seed, stream));
        idx.shuffle(&mut rng);
        idx
    };
    let e = epoch as u64;
    let src = shuffled(n_src, 2 * e + 1);
    let tgt = shuffled(n_tgt, 2 * e + 2);
    (0..n_src.max(n_tgt))
        .map(|k| (src[k % n_src], tgt[k % n_tgt]))
        .collect()
}

/// Random target partner for every source slice.
pub fn style_partners(data_seed: u64, round: u64, n_src: usize, n_tgt: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(data_seed, 0xc6f7_0000 + round));
    (0..n_src).map(|_| rng.random_range(0..n_tgt)).collect()
}

/// Style-transfers every source slice onto a randomly paired target slice.
pub fn transfer_source_set(
    source: &[(Slice, MaskSlice)],
    target: &[Slice],
    alpha: f64,
    data_seed: u64,
    round: u64,
) -> Result<Vec<Slice>> {
    style_partners(data_seed, round, source.len(), target.len())
        .into_iter()
        .zip(source)
        .map(|(t, (s, _))| transfer_style(s, &target[t], alpha))
        .collect()
}

/// Per-step elastic parameters.
pub fn tau_for_step(config: &TrainConfig, step: u64) -> ElasticParams {
    config.elastic_params(mix_seed(config.seeds.tau, step))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub epoch: usize,
    pub losses: StepLosses,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub const HEADER: &'static str = "step,epoch,loss_total,loss_dice,loss_con,loss_ent,lambda";

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{}", Self::HEADER)?;
        for r in &self.rows {
            let l = &r.losses;
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.step, r.epoch, l.total, l.dice, l.con, l.ent, l.lambda
            )?;
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii output")
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub state: TrainState,
    pub log: TrainLog,
}

/// Runs the full training loop.
pub fn train(
    config: &TrainConfig,
    source: &[(Slice, MaskSlice)],
    target: &[Slice],
) -> Result<TrainOutput> {
    train_with_observer(config, source, target, |_, _| {})
}

/// [`train`] with a callback invoked after every optimizer step.
pub fn train_with_observer<F>(
    config: &TrainConfig,
    source: &[(Slice, MaskSlice)],
    target: &[Slice],
    mut observer: F,
) -> Result<TrainOutput>
where
    F: FnMut(&TrainState, &LogRow),
{
    config.validate()?;
    if source.is_empty() {
        return Err(Error::InvalidConfig("labeled source set is empty".into()));
    }
    let needs_target = config.ablation.uses_target() || config.ablation.use_cgftda;
    if needs_target && target.is_empty() {
        return Err(Error::InvalidConfig("unlabeled target set is empty".into()));
    }
    let size = config.net.input_size;
    for (s, m) in source {
        if s.dim() != size || m.dim() != size {
            return Err(Error::shape(size, (s.dim(), m.dim())));
        }
    }
    if let Some(t) = target.iter().find(|t| t.dim() != size) {
        return Err(Error::shape(size, t.dim()));
    }

    let mut state = TrainState::new(config)?;
    let mut log = TrainLog::default();
    let seeds = config.seeds;
    let n_tgt = target.len().max(1);

    let mut transferred = if config.ablation.use_cgftda {
        Some(transfer_source_set(source, target, config.alpha, seeds.data, 0)?)
    } else {
        None
    };
    // Supervised-only runs never touch the target set.
    let fallback_target = Array2::<f64>::zeros(size);

    for epoch in 0..config.epochs {
        state.completed_epochs = epoch;
        if config.ablation.use_cgftda && config.cgftda_mode == CgftdaMode::PerEpoch && epoch > 0 {
            transferred = Some(transfer_source_set(
                source,
                target,
                config.alpha,
                seeds.data,
                epoch as u64,
            )?);
        }
        let order = epoch_order(seeds.data, epoch, source.len(), n_tgt);
        for chunk in order.chunks(config.batch_size) {
            let first_step = state.step;
            let batch: Vec<(StepInput<'_>, ElasticParams)> = chunk
                .iter()
                .enumerate()
                .map(|(k, &(si, ti))| {
                    let image = match &transferred {
                        Some(t) => t[si].pixels(),
                        None => source[si].0.pixels(),
                    };
                    let tgt = target
                        .get(ti)
                        .map(|t| t.pixels())
                        .unwrap_or_else(|| fallback_target.view());
                    let tau = tau_for_step(config, first_step * config.batch_size as u64 + k as u64);
                    (
                        StepInput {
                            source: image,
                            mask: &source[si].1,
                            target: tgt,
                        },
                        tau,
                    )
                })
                .collect();
            let losses = train_batch(&mut state, &batch, config)?;
            let row = LogRow {
                step: state.step,
                epoch,
                losses,
            };
            log.rows.push(row);
            observer(&state, &row);
        }
    }
    state.completed_epochs = config.epochs;
    Ok(TrainOutput { state, log })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lambda_endpoints_and_midpoint() {
        assert_eq!(lambda_schedule(1.0, 1.5, 5.0), 1.5);
        assert_eq!(lambda_schedule(0.0, 1.5, 5.0), 1.5 * (-5.0f64).exp());
        assert!((lambda_schedule(0.0, 1.5, 5.0) - 0.010_106_920_498_628_2).abs() < 1e-15);
        assert!((lambda_schedule(0.5, 1.5, 5.0) - 0.429_757_195_290_285_1).abs() < 1e-15);
    }

    #[test]
    fn lambda_is_monotone() {
        let mut prev = 0.0;
        for k in 0..=100 {
            let l = lambda_schedule(k as f64 / 100.0, 1.5, 5.0);
            assert!(l >= prev);
            prev = l;
        }
    }

    #[test]
    fn scientific_reading_is_available() {
        let cfg = TrainConfig {
            ramp_form: RampForm::Scientific,
            ..TrainConfig::default()
        };
        assert!((consistency_weight(&cfg, 0.0) - 1.5e-5).abs() < 1e-20);
        assert_eq!(consistency_weight(&cfg, 1.0), 0.0);
    }

    #[test]
    fn epoch_order_covers_both_sets() {
        let order = epoch_order(3, 0, 5, 3);
        assert_eq!(order.len(), 5);
        let mut src: Vec<_> = order.iter().map(|p| p.0).collect();
        src.sort();
        assert_eq!(src, vec![0, 1, 2, 3, 4]);
        let tgt: std::collections::BTreeSet<_> = order.iter().map(|p| p.1).collect();
        assert_eq!(tgt.len(), 3);
        assert_eq!(order, epoch_order(3, 0, 5, 3));
        assert_ne!(order, epoch_order(3, 1, 5, 3));
    }

    #[test]
    fn mix_seed_spreads() {
        assert_ne!(mix_seed(1, 2), mix_seed(2, 1));
        assert_ne!(mix_seed(0, 0), 0);
    }
}
