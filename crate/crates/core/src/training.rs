//! Optimizer, temperature schedules, the two-stage training protocol, and
//! hard-quantized evaluation.
//!
//! Training runs in two stages: a full-precision stage that learns the phase
//! maps unconstrained, then a quantization-aware stage that first wraps all
//! phases into [0, 2pi) and then trains through the configured surrogate
//! quantizer. Temperatures follow one of three regimes: fixed (FT), a
//! staircase schedule (LI), or learned per layer through a reparameterized
//! scalar pushed by a staged regularizer (LT).
//!
//! Everything is deterministic given the seed: batch shuffles, Gumbel noise,
//! and parameter updates are pure functions of `(seed, stage, epoch, sample)`.
//! Within a batch, per-sample forward/backward passes run in parallel but are
//! reduced in sample order, so results are bit-identical regardless of thread
//! count. The worker pool is global, lazily built, and can be capped with the
//! `DIFFRACT_QAT_THREADS` environment variable.

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::sync::OnceLock;

use crate::data::{batch_indices, mix_seed, pad_to_shape, PhaseSample};
use crate::error::{Error, Result};
use crate::network::{
    DiffractiveNetwork, Geometry, Gradients, LayerQuantizer, Temperature, TrainForward,
};
use crate::objectives::{
    build_label_map, classification_loss, classification_loss_grad, classify, lt_regularizer,
    lt_regularizer_grad, lt_stage_multiplier, patch_layout, reverse_huber, reverse_huber_grad,
    ssim, LabelMap, LossBreakdown,
};
use crate::quantizers::{QuantizerSpec, TemperatureParam};

/// The two physics tasks the toolkit trains for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Classification,
    Qpi,
}

/// Which quantizer family the QAT stage trains through.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantizerKind {
    FullPrecision,
    Hard,
    Ste,
    Gumbel,
    Dsq,
    Psq,
}

/// Temperature regime for the staircase surrogates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleMode {
    /// Fixed temperature `tau0` for the whole run.
    Ft,
    /// Staircase increase: `tau0 + delta_tau * floor(t / delta_t)`.
    Li,
    /// Per-layer learned temperature with the staged norm regularizer.
    Lt,
}

/// Temperature schedule and regularizer hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleConfig {
    pub mode: ScheduleMode,
    pub tau0: f64,
    pub delta_tau: f64,
    pub delta_t: usize,
    /// Temperature cap parameter: learned temperatures satisfy
    /// `tau <= 1/gamma`.
    pub gamma: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Regularizer stage length: the multiplier doubles every `beta` epochs.
    pub beta: usize,
    /// Use the staircase's literal printed form
    /// `tau0 + floor(delta_tau / delta_t) * t` instead of the interval
    /// semantics. Off by default.
    pub literal_staircase: bool,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            mode: ScheduleMode::Ft,
            tau0: 1.0,
            delta_tau: 0.2,
            delta_t: 1,
            gamma: 0.05,
            lambda1: 1e-4,
            lambda2: 0.05,
            beta: 5,
            literal_staircase: false,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.tau0.is_finite() || self.tau0 <= 0.0 {
            return Err(Error::Config(format!(
                "tau0 must be positive, got {}",
                self.tau0
            )));
        }
        if self.mode == ScheduleMode::Li && self.delta_t == 0 {
            return Err(Error::Config("LI schedule needs delta_t >= 1".into()));
        }
        if self.mode == ScheduleMode::Li && (!self.delta_tau.is_finite() || self.delta_tau < 0.0) {
            return Err(Error::Config(format!(
                "LI schedule needs delta_tau >= 0, got {}",
                self.delta_tau
            )));
        }
        if self.mode == ScheduleMode::Lt {
            if !self.gamma.is_finite() || self.gamma <= 0.0 {
                return Err(Error::Config(format!(
                    "gamma must be positive, got {}",
                    self.gamma
                )));
            }
            if self.beta == 0 {
                return Err(Error::Config(
                    "regularizer stage length beta must be >= 1".into(),
                ));
            }
            if !self.lambda1.is_finite()
                || self.lambda1 < 0.0
                || !self.lambda2.is_finite()
                || self.lambda2 < 0.0
            {
                return Err(Error::Config(
                    "lambda1 and lambda2 must be non-negative".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Annealing of the Gumbel-softmax temperature:
/// `max(temp0 - decay * epoch, floor)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GumbelSchedule {
    pub temp0: f64,
    pub decay: f64,
    pub floor: f64,
}

impl Default for GumbelSchedule {
    fn default() -> Self {
        Self {
            temp0: 50.0,
            decay: 0.5,
            floor: 0.5,
        }
    }
}

impl GumbelSchedule {
    pub fn at_epoch(&self, epoch: usize) -> f64 {
        (self.temp0 - self.decay * epoch as f64).max(self.floor)
    }
}

/// Everything one training stage needs besides the data.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub task: Task,
    pub quantizer: QuantizerKind,
    pub levels: u32,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub schedule: ScheduleConfig,
    pub gumbel: GumbelSchedule,
    /// Reverse-Huber threshold fraction for the phase-imaging loss.
    pub berhu_c_frac: f64,
}

impl TrainConfig {
    /// A config with the documented defaults for everything but the
    /// task/quantizer/levels triple.
    pub fn new(task: Task, quantizer: QuantizerKind, levels: u32) -> Self {
        Self {
            task,
            quantizer,
            levels,
            epochs: 0,
            batch_size: 32,
            lr: 1e-3,
            seed: 0,
            schedule: ScheduleConfig::default(),
            gumbel: GumbelSchedule::default(),
            berhu_c_frac: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if self.quantizer != QuantizerKind::FullPrecision && self.levels < 2 {
            return Err(Error::Config(format!(
                "quantized training needs at least 2 levels, got {}",
                self.levels
            )));
        }
        if !(0.0 < self.berhu_c_frac && self.berhu_c_frac < 1.0) {
            return Err(Error::Config(format!(
                "berhu_c_frac must be in (0,1), got {}",
                self.berhu_c_frac
            )));
        }
        self.schedule.validate()?;
        if self.schedule.mode == ScheduleMode::Lt && self.quantizer != QuantizerKind::Psq {
            return Err(Error::Config(format!(
                "the learned-temperature schedule requires the sigmoid-staircase quantizer; \
                 {:?} has no learnable temperature",
                self.quantizer
            )));
        }
        Ok(())
    }
}

/// Wrap a phase into [0, 2pi).
pub fn wrap_phase(phi: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let w = phi.rem_euclid(two_pi);
    // rem_euclid can return exactly 2pi after rounding for tiny negatives.
    if w == two_pi {
        0.0
    } else {
        w
    }
}

/// The quantization range for a task: [0, 1.99pi] in general; the two-level
/// classification case uses [0, pi].
pub fn make_quant_spec(levels: u32, task: Task) -> Result<QuantizerSpec> {
    let pi = std::f64::consts::PI;
    if task == Task::Classification && levels == 2 {
        QuantizerSpec::new(0.0, pi, 2)
    } else {
        QuantizerSpec::new(0.0, 1.99 * pi, levels)
    }
}

/// Staircase temperature at `epoch` for the LI regime. The default form
/// raises the temperature by `delta_tau` every `delta_t` epochs; the literal
/// form is `tau0 + floor(delta_tau / delta_t) * t`.
pub fn linear_temperature(epoch: usize, cfg: &ScheduleConfig) -> f64 {
    if cfg.literal_staircase {
        cfg.tau0 + (cfg.delta_tau / cfg.delta_t as f64).floor() * epoch as f64
    } else {
        cfg.tau0 + cfg.delta_tau * (epoch / cfg.delta_t) as f64
    }
}

const TAG_INIT: u64 = 0x11;
const TAG_FP_STAGE: u64 = 0x22;
const TAG_QAT_STAGE: u64 = 0x33;
const TAG_GUMBEL: u64 = 0x44;

/// Independent uniform [0, 2pi) phases for every layer, drawn row-major from
/// a stream derived from `seed`.
pub fn uniform_phase_init(geom: &Geometry, seed: u64) -> Vec<Array2<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, TAG_INIT));
    let two_pi = 2.0 * std::f64::consts::PI;
    (0..geom.num_layers)
        .map(|_| Array2::from_shape_fn((geom.layer_h, geom.layer_w), |_| rng.gen::<f64>() * two_pi))
        .collect()
}

/// Flat-tensor Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(num_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update. `params` and `grads` must have the length the state was
    /// built with.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::ShapeMismatch(format!(
                "Adam state holds {} parameters, got {} params / {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Snapshot of every trainable quantity of a network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub phases: Vec<Array2<f64>>,
    /// Learned temperature parameter per layer, where present.
    pub ks: Vec<Option<f64>>,
    /// Gumbel logits per layer, where present.
    pub logits: Vec<Option<Array3<f64>>>,
}

/// Capture the trainable state of a network.
pub fn capture_state(net: &DiffractiveNetwork) -> ModelState {
    let ks = net.learned_ks();
    let logits = net
        .quantizers()
        .iter()
        .map(|q| match q {
            LayerQuantizer::Gumbel { logits, .. } => Some(logits.clone()),
            _ => None,
        })
        .collect();
    ModelState {
        phases: net.phases().to_vec(),
        ks,
        logits,
    }
}

/// Restore a snapshot taken from a network with the same layer structure.
pub fn restore_state(net: &mut DiffractiveNetwork, state: &ModelState) -> Result<()> {
    let n = net.geometry().num_layers;
    if state.phases.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "snapshot has {} layers, network has {n}",
            state.phases.len()
        )));
    }
    for (dst, src) in net.phases_mut().iter_mut().zip(state.phases.iter()) {
        dst.assign(src);
    }
    for layer in 0..n {
        if let Some(k) = state.ks[layer] {
            if let Some(tp) = net.learned_temperature_mut(layer) {
                tp.k = k;
            }
        }
        if let Some(src) = &state.logits[layer] {
            if let Some(dst) = net.gs_logits_mut(layer) {
                dst.assign(src);
            }
        }
    }
    Ok(())
}

/// Metrics of a hard-quantized evaluation pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalMetrics {
    /// Fraction of correctly classified samples (classification only).
    pub accuracy: Option<f64>,
    /// Mean SSIM against the phase target (phase imaging only).
    pub ssim: Option<f64>,
    /// Mean absolute error against the phase target (phase imaging only).
    pub l1: Option<f64>,
}

impl EvalMetrics {
    /// The model-selection score: accuracy or SSIM.
    pub fn primary(&self) -> f64 {
        self.accuracy
            .or(self.ssim)
            .expect("one task metric is always present")
    }
}

/// One epoch of a training report.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean total loss (task + regularizer) over the epoch's batches.
    pub train_loss: f64,
    pub task_loss: f64,
    pub regularizer: f64,
    /// Hard-quantized validation score at the end of the epoch.
    pub val_metric: f64,
    /// Per-layer temperature after the epoch's updates, where applicable.
    pub temperatures: Vec<Option<f64>>,
    /// Regularizer stage multiplier during the epoch (learned-temperature
    /// runs only).
    pub stage_multiplier: Option<f64>,
}

/// Per-epoch records of one training stage.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
}

/// A finished training stage: its report, the state after every epoch, and
/// the index of the epoch the network was finally restored to.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub report: TrainReport,
    pub states: Vec<ModelState>,
    pub best_epoch: Option<usize>,
}

/// The epoch with the highest validation metric; ties break to the earliest.
pub fn select_best(records: &[EpochRecord]) -> Result<usize> {
    if records.is_empty() {
        return Err(Error::InvalidParam(
            "cannot select from an empty report".into(),
        ));
    }
    let mut best = 0usize;
    for (i, r) in records.iter().enumerate() {
        if r.val_metric > records[best].val_metric {
            best = i;
        }
    }
    Ok(best)
}

fn worker_pool() -> &'static rayon::ThreadPool {
    static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();
    POOL.get_or_init(|| {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(n) = std::env::var("DIFFRACT_QAT_THREADS")
            .ok()
            .and_then(|s| s.parse::<usize>().ok())
        {
            builder = builder.num_threads(n.max(1));
        }
        builder
            .build()
            .expect("worker pool construction cannot fail")
    })
}

/// A sample with its field-of-view image and task target resolved once.
struct Prepared {
    image: Array2<f64>,
    label: Option<usize>,
    /// Phase-imaging target (the [0,1] image itself); present for QPI.
    target: Option<Array2<f64>>,
}

fn prepare(samples: &[PhaseSample], geom: &Geometry, task: Task) -> Result<Vec<Prepared>> {
    samples
        .iter()
        .map(|s| {
            let image = if s.image.dim() == (geom.fov_h, geom.fov_w) {
                s.image.clone()
            } else {
                pad_to_shape(&s.image, geom.fov_h, geom.fov_w)?
            };
            match task {
                Task::Classification => {
                    let label = s.label.ok_or_else(|| {
                        Error::Config(format!("sample {} has no label for classification", s.id))
                    })? as usize;
                    if label > 9 {
                        return Err(Error::Config(format!(
                            "sample {} label {label} outside 0..=9",
                            s.id
                        )));
                    }
                    Ok(Prepared {
                        image,
                        label: Some(label),
                        target: None,
                    })
                }
                Task::Qpi => Ok(Prepared {
                    target: Some(image.clone()),
                    image,
                    label: None,
                }),
            }
        })
        .collect()
}

/// Which tensors the optimizer updates.
#[derive(Debug, Clone, Copy, PartialEq)]
enum ParamSet {
    Phases,
    PhasesAndTemps,
    Logits,
}

fn param_set(quantizer: QuantizerKind, mode: ScheduleMode) -> ParamSet {
    match quantizer {
        QuantizerKind::Gumbel => ParamSet::Logits,
        QuantizerKind::Psq if mode == ScheduleMode::Lt => ParamSet::PhasesAndTemps,
        _ => ParamSet::Phases,
    }
}

fn param_count(net: &DiffractiveNetwork, set: ParamSet) -> usize {
    match set {
        ParamSet::Phases => net.phases().iter().map(|p| p.len()).sum(),
        ParamSet::PhasesAndTemps => {
            let phases: usize = net.phases().iter().map(|p| p.len()).sum();
            phases + net.learned_ks().iter().flatten().count()
        }
        ParamSet::Logits => net
            .quantizers()
            .iter()
            .map(|q| match q {
                LayerQuantizer::Gumbel { logits, .. } => logits.len(),
                _ => 0,
            })
            .sum(),
    }
}

fn gather_params(net: &DiffractiveNetwork, set: ParamSet, out: &mut Vec<f64>) {
    out.clear();
    match set {
        ParamSet::Phases | ParamSet::PhasesAndTemps => {
            for p in net.phases() {
                out.extend(p.iter());
            }
            if set == ParamSet::PhasesAndTemps {
                out.extend(net.learned_ks().iter().flatten());
            }
        }
        ParamSet::Logits => {
            for q in net.quantizers() {
                if let LayerQuantizer::Gumbel { logits, .. } = q {
                    out.extend(logits.iter());
                }
            }
        }
    }
}

fn scatter_params(net: &mut DiffractiveNetwork, set: ParamSet, vals: &[f64]) {
    let mut pos = 0usize;
    match set {
        ParamSet::Phases | ParamSet::PhasesAndTemps => {
            for p in net.phases_mut() {
                for dst in p.iter_mut() {
                    *dst = vals[pos];
                    pos += 1;
                }
            }
            if set == ParamSet::PhasesAndTemps {
                for layer in 0..net.geometry().num_layers {
                    if let Some(tp) = net.learned_temperature_mut(layer) {
                        tp.k = vals[pos];
                        pos += 1;
                    }
                }
            }
        }
        ParamSet::Logits => {
            for layer in 0..net.geometry().num_layers {
                if let Some(logits) = net.gs_logits_mut(layer) {
                    for dst in logits.iter_mut() {
                        *dst = vals[pos];
                        pos += 1;
                    }
                }
            }
        }
    }
    debug_assert_eq!(pos, vals.len());
}

/// Add `scale * grads` into the flat accumulator, using the same layout as
/// [`gather_params`].
fn accumulate_grads(acc: &mut [f64], grads: &Gradients, set: ParamSet, scale: f64) {
    let mut pos = 0usize;
    match set {
        ParamSet::Phases | ParamSet::PhasesAndTemps => {
            for g in &grads.phases {
                for v in g.iter() {
                    acc[pos] += scale * v;
                    pos += 1;
                }
            }
            if set == ParamSet::PhasesAndTemps {
                // In this mode every layer carries a learned temperature, so
                // the dense per-layer gradient maps 1:1 onto the slots that
                // gather_params laid out.
                for g in &grads.temperature_k {
                    acc[pos] += scale * g;
                    pos += 1;
                }
            }
        }
        ParamSet::Logits => {
            for g in grads.logits.iter().flatten() {
                for v in g.iter() {
                    acc[pos] += scale * v;
                    pos += 1;
                }
            }
        }
    }
    debug_assert_eq!(pos, acc.len());
}

/// Outcome of one sample's forward/backward pass.
struct SampleResult {
    task_loss: f64,
    grads: Gradients,
}

/// Loss value and intensity gradient for one sample, by task.
fn task_loss_and_grad(
    prep: &Prepared,
    intensity: &Array2<f64>,
    labels: &[LabelMap],
    berhu_c_frac: f64,
) -> Result<(f64, Array2<f64>)> {
    match (&prep.label, &prep.target) {
        (Some(label), _) => {
            let lm = &labels[*label];
            Ok((
                classification_loss(lm, intensity)?,
                classification_loss_grad(lm, intensity)?,
            ))
        }
        (None, Some(target)) => Ok((
            reverse_huber(intensity, target, berhu_c_frac)?,
            reverse_huber_grad(intensity, target, berhu_c_frac)?,
        )),
        _ => unreachable!("prepare always sets a label or a target"),
    }
}

/// Run one training stage over `epochs`, mutating the network in place and
/// finally restoring the epoch with the best validation metric.
fn run_stage(
    cfg: &TrainConfig,
    net: &mut DiffractiveNetwork,
    train: &[PhaseSample],
    val: &[PhaseSample],
    stage_tag: u64,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if cfg.epochs > 0 && train.is_empty() {
        return Err(Error::Config("cannot train on an empty dataset".into()));
    }
    let geom = *net.geometry();
    let prepared = prepare(train, &geom, cfg.task)?;
    let labels = label_maps_for(cfg.task, &geom)?;
    let set = param_set(cfg.quantizer, cfg.schedule.mode);
    let lt_active = cfg.schedule.mode == ScheduleMode::Lt && set == ParamSet::PhasesAndTemps;

    let n_params = param_count(net, set);
    let mut adam = Adam::new(n_params, cfg.lr);
    let mut params = Vec::with_capacity(n_params);
    let mut grad_acc = vec![0.0; n_params];
    let stage_seed = mix_seed(cfg.seed, stage_tag);

    let mut report = TrainReport::default();
    let mut states = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        // Scheduled temperatures for this epoch.
        match cfg.schedule.mode {
            ScheduleMode::Ft => net.set_fixed_temperatures(cfg.schedule.tau0),
            ScheduleMode::Li => {
                net.set_fixed_temperatures(linear_temperature(epoch, &cfg.schedule))
            }
            ScheduleMode::Lt => {} // temperatures live in the learned parameters
        }
        if cfg.quantizer == QuantizerKind::Gumbel {
            net.set_gumbel_temperature(cfg.gumbel.at_epoch(epoch));
        }

        let mut epoch_total = 0.0;
        let mut epoch_task = 0.0;
        let mut epoch_reg = 0.0;
        let batches = batch_indices(prepared.len(), cfg.batch_size, stage_seed, epoch)?;
        let n_batches = batches.len();
        for batch in batches {
            let shared: &DiffractiveNetwork = net;
            let results: Vec<Result<SampleResult>> = worker_pool().install(|| {
                batch
                    .par_iter()
                    .map(|&idx| {
                        let prep = &prepared[idx];
                        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(
                            mix_seed(mix_seed(stage_seed, TAG_GUMBEL), epoch as u64),
                            idx as u64,
                        ));
                        let tape: TrainForward = shared.forward_train(&prep.image, &mut rng)?;
                        let (task_loss, igrad) =
                            task_loss_and_grad(prep, &tape.intensity, &labels, cfg.berhu_c_frac)?;
                        let grads = shared.backward(&tape, &igrad)?;
                        Ok(SampleResult { task_loss, grads })
                    })
                    .collect()
            });

            // Ordered reduction: results arrive in batch order, so the
            // floating-point sums are independent of thread scheduling.
            grad_acc.iter_mut().for_each(|g| *g = 0.0);
            let inv_bs = 1.0 / batch.len() as f64;
            let mut batch_task = 0.0;
            for r in results {
                let r = r?;
                batch_task += r.task_loss * inv_bs;
                accumulate_grads(&mut grad_acc, &r.grads, set, inv_bs);
            }

            let mut batch_reg = 0.0;
            if lt_active {
                let ks: Vec<f64> = net.learned_ks().iter().flatten().copied().collect();
                batch_reg = lt_regularizer(
                    &ks,
                    epoch,
                    cfg.schedule.beta,
                    cfg.schedule.lambda1,
                    cfg.schedule.lambda2,
                )?;
                let kg = lt_regularizer_grad(&ks, epoch, cfg.schedule.beta, cfg.schedule.lambda1)?;
                let k_base = n_params - ks.len();
                for (i, g) in kg.iter().enumerate() {
                    grad_acc[k_base + i] += g;
                }
            }

            gather_params(net, set, &mut params);
            adam.step(&mut params, &grad_acc)?;
            scatter_params(net, set, &params);

            let breakdown = LossBreakdown {
                task_loss: batch_task,
                regularizer: batch_reg,
            };
            epoch_total += breakdown.total();
            epoch_task += batch_task;
            epoch_reg += batch_reg;
        }

        let val_metric = evaluate_hard(net, val, cfg.task)?.primary();
        let inv_nb = 1.0 / n_batches as f64;
        report.epochs.push(EpochRecord {
            epoch,
            train_loss: epoch_total * inv_nb,
            task_loss: epoch_task * inv_nb,
            regularizer: epoch_reg * inv_nb,
            val_metric,
            temperatures: net.temperatures(),
            stage_multiplier: lt_active.then(|| lt_stage_multiplier(epoch, cfg.schedule.beta)),
        });
        states.push(capture_state(net));
    }

    let best_epoch = if report.epochs.is_empty() {
        None
    } else {
        let best = select_best(&report.epochs)?;
        restore_state(net, &states[best])?;
        Some(best)
    };
    Ok(TrainOutcome {
        report,
        states,
        best_epoch,
    })
}

fn label_maps_for(task: Task, geom: &Geometry) -> Result<Vec<LabelMap>> {
    match task {
        Task::Classification => (0..10)
            .map(|c| build_label_map(c, geom.fov_h, geom.fov_w))
            .collect(),
        Task::Qpi => Ok(Vec::new()),
    }
}

/// Full-precision stage: every layer is forced to the identity quantizer and
/// only the phase maps train. The network is left at the epoch with the best
/// validation metric.
pub fn train_full_precision(
    cfg: &TrainConfig,
    net: &mut DiffractiveNetwork,
    train: &[PhaseSample],
    val: &[PhaseSample],
) -> Result<TrainOutcome> {
    for q in net.quantizers_mut() {
        *q = LayerQuantizer::FullPrecision;
    }
    let mut fp_cfg = cfg.clone();
    fp_cfg.quantizer = QuantizerKind::FullPrecision;
    fp_cfg.schedule.mode = ScheduleMode::Ft;
    run_stage(&fp_cfg, net, train, val, TAG_FP_STAGE)
}

/// Quantization-aware stage. Wraps all phases into [0, 2pi) once, installs
/// the configured quantizer on every layer, then trains for `cfg.epochs`
/// with the configured temperature regime. With the Hard quantizer and zero
/// epochs this is exactly post-quantization of the full-precision model.
pub fn train_qat(
    cfg: &TrainConfig,
    net: &mut DiffractiveNetwork,
    train: &[PhaseSample],
    val: &[PhaseSample],
) -> Result<TrainOutcome> {
    cfg.validate()?;
    for p in net.phases_mut() {
        p.mapv_inplace(wrap_phase);
    }
    if cfg.quantizer == QuantizerKind::FullPrecision {
        for q in net.quantizers_mut() {
            *q = LayerQuantizer::FullPrecision;
        }
    } else {
        let spec = make_quant_spec(cfg.levels, cfg.task)?;
        let layer_q = |phases: &Array2<f64>| -> LayerQuantizer {
            match cfg.quantizer {
                QuantizerKind::Hard => LayerQuantizer::Hard(spec),
                QuantizerKind::Ste => LayerQuantizer::Ste(spec),
                QuantizerKind::Dsq => LayerQuantizer::Dsq {
                    spec,
                    temperature: Temperature::Fixed(cfg.schedule.tau0),
                },
                QuantizerKind::Psq => LayerQuantizer::Psq {
                    spec,
                    temperature: if cfg.schedule.mode == ScheduleMode::Lt {
                        Temperature::Learned(
                            TemperatureParam::new(
                                1.0 / cfg.schedule.tau0 - cfg.schedule.gamma,
                                cfg.schedule.gamma,
                            )
                            .expect("validated schedule"),
                        )
                    } else {
                        Temperature::Fixed(cfg.schedule.tau0)
                    },
                },
                QuantizerKind::Gumbel => {
                    LayerQuantizer::gumbel_from_phases(spec, phases, cfg.gumbel.at_epoch(0))
                }
                QuantizerKind::FullPrecision => unreachable!(),
            }
        };
        let new_qs: Vec<LayerQuantizer> = net.phases().iter().map(layer_q).collect();
        for (dst, src) in net.quantizers_mut().iter_mut().zip(new_qs) {
            *dst = src;
        }
    }
    run_stage(cfg, net, train, val, TAG_QAT_STAGE)
}

/// Evaluate a model with all weights hard-quantized (full-precision layers
/// stay raw): classification accuracy, or mean SSIM and mean absolute error
/// for phase imaging. Deterministic; samples may be processed in parallel
/// but are reduced in dataset order.
pub fn evaluate_hard(
    net: &DiffractiveNetwork,
    dataset: &[PhaseSample],
    task: Task,
) -> Result<EvalMetrics> {
    let geom = *net.geometry();
    let prepared = prepare(dataset, &geom, task)?;
    if prepared.is_empty() {
        return Err(Error::InvalidParam(
            "cannot evaluate on an empty dataset".into(),
        ));
    }
    match task {
        Task::Classification => {
            let layout = patch_layout(geom.fov_h, geom.fov_w)?;
            let correct: Vec<Result<bool>> =
                worker_pool().install(|| {
                    prepared
                        .par_iter()
                        .map(|p| {
                            let intensity = net.evaluate(&p.image)?;
                            Ok(classify(&intensity, &layout)
                                == p.label.expect("classification sample"))
                        })
                        .collect()
                });
            let mut hits = 0usize;
            for c in correct {
                if c? {
                    hits += 1;
                }
            }
            Ok(EvalMetrics {
                accuracy: Some(hits as f64 / prepared.len() as f64),
                ssim: None,
                l1: None,
            })
        }
        Task::Qpi => {
            let scores: Vec<Result<(f64, f64)>> = worker_pool().install(|| {
                prepared
                    .par_iter()
                    .map(|p| {
                        let intensity = net.evaluate(&p.image)?;
                        let target = p.target.as_ref().expect("phase-imaging sample");
                        let s = ssim(&intensity, target, 1.0)?;
                        let l1 = intensity
                            .iter()
                            .zip(target.iter())
                            .map(|(a, b)| (a - b).abs())
                            .sum::<f64>()
                            / intensity.len() as f64;
                        Ok((s, l1))
                    })
                    .collect()
            });
            let mut ssim_sum = 0.0;
            let mut l1_sum = 0.0;
            let n = scores.len() as f64;
            for s in scores {
                let (s, l1) = s?;
                ssim_sum += s;
                l1_sum += l1;
            }
            Ok(EvalMetrics {
                accuracy: None,
                ssim: Some(ssim_sum / n),
                l1: Some(l1_sum / n),
            })
        }
    }
}
