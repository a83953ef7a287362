//! Regularized trajectory loss, Adam, gradient clipping, learning-rate
//! schedules and the epoch/batch training loop.
//!
//! The data term is the mean squared error over samples, grid points and
//! output channels. The regularizer is `(λ_L/√N)·(|Γ|₁ + |Π|₁)` where `N` is
//! the training-set size.

use std::io::Write;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mlp::ParamGrads;
use crate::oscillator::OscillatorModel;
use crate::trajectory::Trajectory;
use crate::Scalar;

/// One input/target pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    pub input: Trajectory<T>,
    pub target: Trajectory<T>,
}

impl<T: Scalar> Sample<T> {
    pub fn new(input: Trajectory<T>, target: Trajectory<T>) -> Result<Self> {
        if input.steps() != target.steps() {
            return Err(Error::dim("target steps", input.steps(), target.steps()));
        }
        Ok(Self { input, target })
    }
}

/// Training and validation samples.
#[derive(Debug, Clone, Default)]
pub struct TrainData<T> {
    pub train: Vec<Sample<T>>,
    pub val: Vec<Sample<T>>,
}

/// Gradients for both networks of an oscillator.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads<T> {
    pub gamma: ParamGrads<T>,
    pub pi: ParamGrads<T>,
}

impl<T: Scalar> ModelGrads<T> {
    pub fn zeros_like(model: &OscillatorModel<T>) -> Self {
        Self {
            gamma: ParamGrads::zeros_like(&model.gamma),
            pi: ParamGrads::zeros_like(&model.pi),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.gamma.is_finite() && self.pi.is_finite()
    }

    pub fn add_scaled(&mut self, other: &Self, c: T) {
        self.gamma.add_scaled(&other.gamma, c);
        self.pi.add_scaled(&other.pi, c);
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.gamma.iter().chain(self.pi.iter())
    }
}

fn check_batch<T: Scalar>(model: &OscillatorModel<T>, batch: &[&Sample<T>]) -> Result<(usize, usize)> {
    let first = batch.first().ok_or_else(|| Error::invalid("empty batch"))?;
    let steps = first.input.steps();
    let q = model.dims().q;
    for (l, s) in batch.iter().enumerate() {
        if s.input.steps() != steps || s.target.steps() != steps {
            return Err(Error::invalid(format!(
                "sample {l} has {} input / {} target steps, expected {steps}",
                s.input.steps(),
                s.target.steps()
            )));
        }
        if s.target.channels() != q {
            return Err(Error::dim(format!("sample {l} target channels"), q, s.target.channels()));
        }
    }
    Ok((steps, q))
}

/// Mean squared error and its exact gradient. Per-sample gradients are
/// computed in parallel and reduced in sample order.
pub fn empirical_loss<T: Scalar>(model: &OscillatorModel<T>, batch: &[&Sample<T>]) -> Result<(T, ModelGrads<T>)> {
    let (steps, q) = check_batch(model, batch)?;
    let denom = T::from_usize_lossy(batch.len() * steps * q);
    let scale = T::lit(2.0) / denom;
    let parts: Vec<(T, ModelGrads<T>)> = batch
        .par_iter()
        .map(|s| -> Result<(T, ModelGrads<T>)> {
            let (y, rec) = model.rollout(&s.input)?;
            let mut sq = T::zero();
            let y_bar: Vec<T> = y
                .values()
                .iter()
                .zip(s.target.values())
                .map(|(a, b)| {
                    let d = *a - *b;
                    sq += d * d;
                    scale * d
                })
                .collect();
            let mut g = ModelGrads::zeros_like(model);
            model.accumulate_vjp(&s.input, &rec, &y_bar, &mut g.gamma, &mut g.pi)?;
            Ok((sq, g))
        })
        .collect::<Result<_>>()?;
    let mut total = T::zero();
    let mut grads = ModelGrads::zeros_like(model);
    for (sq, g) in &parts {
        total += *sq;
        grads.add_scaled(g, T::one());
    }
    Ok((total / denom, grads))
}

/// Mean squared error without gradients.
pub fn evaluate_loss<T: Scalar>(model: &OscillatorModel<T>, samples: &[Sample<T>]) -> Result<T> {
    let refs: Vec<&Sample<T>> = samples.iter().collect();
    let (steps, q) = check_batch(model, &refs)?;
    let sums: Vec<T> = samples
        .par_iter()
        .map(|s| -> Result<T> {
            let y = model.predict(&s.input)?;
            Ok(y.values()
                .iter()
                .zip(s.target.values())
                .fold(T::zero(), |acc, (a, b)| acc + (*a - *b) * (*a - *b)))
        })
        .collect::<Result<_>>()?;
    let total = sums.into_iter().fold(T::zero(), |a, b| a + b);
    Ok(total / T::from_usize_lossy(samples.len() * steps * q))
}

/// `λ_L/√N`.
pub fn penalty_coefficient(lambda_l: f64, n_train: usize) -> f64 {
    lambda_l / (n_train as f64).sqrt()
}

pub fn regularized_loss<T: Scalar>(
    model: &OscillatorModel<T>,
    batch: &[&Sample<T>],
    lambda_l: f64,
    n_train: usize,
) -> Result<(T, ModelGrads<T>)> {
    if !(lambda_l >= 0.0) {
        return Err(Error::invalid(format!("λ_L must be ≥ 0, got {lambda_l}")));
    }
    if n_train == 0 {
        return Err(Error::invalid("N_train must be ≥ 1"));
    }
    let (mut loss, mut grads) = empirical_loss(model, batch)?;
    if lambda_l > 0.0 {
        let c = T::lit(penalty_coefficient(lambda_l, n_train));
        loss += c * (model.gamma.l1_norm() + model.pi.l1_norm());
        grads.gamma.add_scaled(&model.gamma.l1_subgradient(), c);
        grads.pi.add_scaled(&model.pi.l1_subgradient(), c);
    }
    Ok((loss, grads))
}

/// Rescales `grads` to global L² norm `threshold` if it is larger. Returns the
/// norm before clipping.
pub fn clip_gradients<T: Scalar>(grads: &mut ParamGrads<T>, threshold: T) -> T {
    let norm = grads.norm_l2();
    if norm > threshold {
        grads.scale(threshold / norm);
    }
    norm
}

/// Clips each network separately.
pub fn clip_model_gradients<T: Scalar>(grads: &mut ModelGrads<T>, threshold: T) -> (T, T) {
    (clip_gradients(&mut grads.gamma, threshold), clip_gradients(&mut grads.pi, threshold))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: ModelGrads<T>,
    pub v: ModelGrads<T>,
    pub step_count: u64,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(model: &OscillatorModel<T>) -> Self {
        Self {
            m: ModelGrads::zeros_like(model),
            v: ModelGrads::zeros_like(model),
            step_count: 0,
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
        }
    }
}

/// One bias-corrected Adam update of every parameter, PReLU slopes included.
pub fn adam_step<T: Scalar>(
    state: &mut AdamState<T>,
    model: &mut OscillatorModel<T>,
    grads: &ModelGrads<T>,
    lr: T,
) -> Result<()> {
    if !grads.gamma.matches(&model.gamma)
        || !grads.pi.matches(&model.pi)
        || !state.m.gamma.same_shape(&grads.gamma)
        || !state.m.pi.same_shape(&grads.pi)
    {
        return Err(Error::invalid("optimizer state, gradients and model have different shapes"));
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite {
            context: "gradient passed to Adam".into(),
        });
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = T::one() - b1.powi(t);
    let c2 = T::one() - b2.powi(t);

    let nets = [
        (&mut model.gamma, &grads.gamma, &mut state.m.gamma, &mut state.v.gamma),
        (&mut model.pi, &grads.pi, &mut state.m.pi, &mut state.v.pi),
    ];
    for (params, g, m, v) in nets {
        for (((p, g), m), v) in params
            .blocks_mut()
            .into_iter()
            .zip(g.blocks())
            .zip(m.blocks_mut())
            .zip(v.blocks_mut())
        {
            for j in 0..p.len() {
                m[j] = b1 * m[j] + (T::one() - b1) * g[j];
                v[j] = b2 * v[j] + (T::one() - b2) * g[j] * g[j];
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                p[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScheduleSpec {
    StepDecay {
        lr0: f64,
        period_epochs: usize,
        factor: f64,
    },
    WarmupExp {
        lr_start: f64,
        lr_peak: f64,
        warmup_epochs: usize,
        period_epochs: usize,
        factor: f64,
    },
}

impl ScheduleSpec {
    /// 0.01 decayed by 0.965 every 100 epochs.
    pub fn default_step_decay() -> Self {
        ScheduleSpec::StepDecay {
            lr0: 0.01,
            period_epochs: 100,
            factor: 0.965,
        }
    }

    /// Linear 0.0005 → 0.02 over 40 epochs, then ×0.95 every 100 epochs.
    pub fn default_warmup() -> Self {
        ScheduleSpec::WarmupExp {
            lr_start: 0.0005,
            lr_peak: 0.02,
            warmup_epochs: 40,
            period_epochs: 100,
            factor: 0.95,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (rates, period, factor) = match *self {
            ScheduleSpec::StepDecay { lr0, period_epochs, factor } => (vec![lr0], period_epochs, factor),
            ScheduleSpec::WarmupExp {
                lr_start,
                lr_peak,
                period_epochs,
                factor,
                ..
            } => (vec![lr_start, lr_peak], period_epochs, factor),
        };
        if !rates.iter().all(|r| *r > 0.0 && r.is_finite()) {
            return Err(Error::invalid(format!("learning rates must be positive: {self:?}")));
        }
        if period == 0 {
            return Err(Error::invalid("decay period must be ≥ 1 epoch"));
        }
        if !(factor > 0.0 && factor <= 1.0) {
            return Err(Error::invalid(format!("decay factor must lie in (0, 1], got {factor}")));
        }
        Ok(())
    }
}

pub fn lr_at(schedule: &ScheduleSpec, epoch: usize) -> f64 {
    match *schedule {
        ScheduleSpec::StepDecay {
            lr0,
            period_epochs,
            factor,
        } => lr0 * factor.powi((epoch / period_epochs) as i32),
        ScheduleSpec::WarmupExp {
            lr_start,
            lr_peak,
            warmup_epochs,
            period_epochs,
            factor,
        } => {
            if epoch < warmup_epochs {
                lr_start + (lr_peak - lr_start) * epoch as f64 / warmup_epochs as f64
            } else {
                lr_peak * factor.powi(((epoch - warmup_epochs) / period_epochs) as i32)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectOn {
    #[default]
    TrainLoss,
    ValLoss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lambda_l: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub batches_per_epoch: usize,
    pub lr_schedule: ScheduleSpec,
    pub clip_threshold: f64,
    pub seed: u64,
    pub select_on: SelectOn,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_l: 0.003,
            epochs: 100,
            batch_size: 100,
            batches_per_epoch: 32,
            lr_schedule: ScheduleSpec::default_step_decay(),
            clip_threshold: 1.0,
            seed: 0,
            select_on: SelectOn::TrainLoss,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.batches_per_epoch == 0 {
            return Err(Error::invalid("batch_size and batches_per_epoch must be positive"));
        }
        if !(self.clip_threshold > 0.0) {
            return Err(Error::invalid(format!("clip threshold must be positive, got {}", self.clip_threshold)));
        }
        if !(self.lambda_l >= 0.0) {
            return Err(Error::invalid(format!("λ_L must be ≥ 0, got {}", self.lambda_l)));
        }
        self.lr_schedule.validate()
    }
}

/// Per-epoch record; losses are unregularized mean squared errors on the
/// full train/validation sets after the epoch's updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub l1_norm_gamma: f64,
    pub l1_norm_pi: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub best_model: OscillatorModel<T>,
    /// `None` when the initial model was never improved upon.
    pub best_epoch: Option<usize>,
    pub best_loss: f64,
    pub initial_train_loss: f64,
    pub history: Vec<EpochRecord>,
}

/// Draws `batch_size` distinct indices for every batch, independently across
/// batches, from a ChaCha8 stream seeded with `seed`.
pub struct BatchSampler {
    rng: ChaCha8Rng,
    n: usize,
    batch_size: usize,
}

impl BatchSampler {
    pub fn new(seed: u64, n: usize, batch_size: usize) -> Result<Self> {
        if batch_size == 0 || batch_size > n {
            return Err(Error::invalid(format!("batch size {batch_size} must lie in 1..={n}")));
        }
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            n,
            batch_size,
        })
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        index::sample(&mut self.rng, self.n, self.batch_size).into_vec()
    }
}

fn divergence(e: Error, epoch: usize, batch: usize) -> Error {
    match e {
        Error::Divergence { .. } | Error::NonFinite { .. } => Error::TrainingDivergence { epoch, batch },
        other => other,
    }
}

pub fn train<T: Scalar>(dataset: &TrainData<T>, model0: &OscillatorModel<T>, cfg: &TrainConfig) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if dataset.train.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if cfg.select_on == SelectOn::ValLoss && dataset.val.is_empty() {
        return Err(Error::invalid("validation-loss selection needs a validation set"));
    }
    let n_train = dataset.train.len();
    let mut sampler = BatchSampler::new(cfg.seed, n_train, cfg.batch_size)?;
    let has_val = !dataset.val.is_empty();

    let initial_train_loss = evaluate_loss(model0, &dataset.train)
        .map_err(|e| divergence(e, 0, 0))?
        .as_f64();
    let initial_sel = match cfg.select_on {
        SelectOn::TrainLoss => initial_train_loss,
        SelectOn::ValLoss => evaluate_loss(model0, &dataset.val)
            .map_err(|e| divergence(e, 0, 0))?
            .as_f64(),
    };

    let mut model = model0.clone();
    let mut adam = AdamState::new(&model);
    let mut best_model = model0.clone();
    let mut best_loss = initial_sel;
    let mut best_epoch = None;
    let mut history = Vec::with_capacity(cfg.epochs);
    let clip = T::lit(cfg.clip_threshold);

    for epoch in 0..cfg.epochs {
        let lr = lr_at(&cfg.lr_schedule, epoch);
        for b in 0..cfg.batches_per_epoch {
            let batch: Vec<&Sample<T>> = sampler.next_batch().into_iter().map(|i| &dataset.train[i]).collect();
            let (loss, mut grads) =
                regularized_loss(&model, &batch, cfg.lambda_l, n_train).map_err(|e| divergence(e, epoch, b))?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::TrainingDivergence { epoch, batch: b });
            }
            clip_model_gradients(&mut grads, clip);
            adam_step(&mut adam, &mut model, &grads, T::lit(lr))?;
        }
        let end = cfg.batches_per_epoch;
        let train_loss = evaluate_loss(&model, &dataset.train)
            .map_err(|e| divergence(e, epoch, end))?
            .as_f64();
        let val_loss = if has_val {
            Some(evaluate_loss(&model, &dataset.val).map_err(|e| divergence(e, epoch, end))?.as_f64())
        } else {
            None
        };
        if !train_loss.is_finite() {
            return Err(Error::TrainingDivergence { epoch, batch: end });
        }
        let sel = match cfg.select_on {
            SelectOn::TrainLoss => train_loss,
            SelectOn::ValLoss => val_loss.expect("validation set checked above"),
        };
        if sel < best_loss {
            best_loss = sel;
            best_model = model.clone();
            best_epoch = Some(epoch);
        }
        history.push(EpochRecord {
            epoch,
            lr,
            train_loss,
            val_loss,
            l1_norm_gamma: model.gamma.l1_norm().as_f64(),
            l1_norm_pi: model.pi.l1_norm().as_f64(),
        });
    }

    Ok(TrainOutcome {
        best_model,
        best_epoch,
        best_loss,
        initial_train_loss,
        history,
    })
}

pub const HISTORY_HEADER: &str = "epoch,lr,train_loss,val_loss,l1_norm_gamma,l1_norm_pi";

/// Writes the history as CSV; a missing validation loss is an empty field.
pub fn write_history_csv<W: Write>(mut w: W, history: &[EpochRecord]) -> Result<()> {
    writeln!(w, "{HISTORY_HEADER}")?;
    for r in history {
        let val = r.val_loss.map(|v| format!("{v:e}")).unwrap_or_default();
        writeln!(
            w,
            "{},{:e},{:e},{},{:e},{:e}",
            r.epoch, r.lr, r.train_loss, val, r.l1_norm_gamma, r.l1_norm_pi
        )?;
    }
    Ok(())
}
