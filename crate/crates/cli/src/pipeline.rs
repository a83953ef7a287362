//! In-memory building blocks shared by the subcommands and the acceptance
//! suite.

use std::ops::Range;

use neural_oscillator::dataset::{Dataset, DatasetHeader, TargetKind, DATASET_VERSION};
use neural_oscillator::excitation::ExcitationSampler;
use neural_oscillator::metrics::{
    empirical_distribution, ks_distance, relative_error_extreme, relative_error_response, DensityMethod, Distribution,
    EmpiricalCdf,
};
use neural_oscillator::rng::sample_seed;
use neural_oscillator::structsim::{extreme_process, BoucWen, Outputs};
use neural_oscillator::training::{train, Sample, TrainData, TrainOutcome};
use neural_oscillator::{Activation, Dims, Oscillator, Trajectory};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ActivationKind, ExperimentConfig};
use crate::error::{CliError, CliResult};

pub const SYSTEM_ID: &str = "bouc_wen";

/// Simulates one input/target pair for sample index `l`.
fn simulate_sample(
    cfg: &ExperimentConfig,
    sampler: &ExcitationSampler,
    sys: &BoucWen<f64>,
    l: u64,
) -> CliResult<(Vec<f64>, Vec<f64>)> {
    let d = &cfg.data;
    let u = sampler.sample(sample_seed(cfg.master_seed, l));
    let steps = u.steps();
    let x = if d.substeps == 1 {
        sys.simulate(&u, Outputs::Displacement)?
    } else {
        let fine = sys.simulate_with(&u, d.dt / d.substeps as f64, 0.0, (steps - 1) * d.substeps + 1, Outputs::Displacement)?;
        let values = (0..fine.channels())
            .flat_map(|c| (0..steps).map(move |i| (c, i)))
            .map(|(c, i)| fine.get(c, i * d.substeps))
            .collect();
        Trajectory::new(d.dt, 0.0, fine.channels(), values)?
    };
    let target = match d.target {
        TargetKind::Response => x.channel(d.channel).to_vec(),
        TargetKind::Extreme => extreme_process(&x, d.channel)?.into_values(),
    };
    Ok((u.into_values(), target))
}

/// Samples excitations, simulates the structure and assembles the dataset.
/// Sample `l` depends only on `(master_seed, l)`.
pub fn generate_dataset(cfg: &ExperimentConfig) -> CliResult<Dataset> {
    cfg.validate()?;
    let d = &cfg.data;
    let steps = d.steps();
    let sampler = ExcitationSampler::new(cfg.excitation, d.dt, steps)?;
    let sys = BoucWen::<f64>::new(cfg.structure.clone())?;
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..d.n_samples as u64)
        .into_par_iter()
        .map(|l| simulate_sample(cfg, &sampler, &sys, l))
        .collect::<CliResult<_>>()?;
    let mut inputs = Vec::with_capacity(d.n_samples * steps);
    let mut targets = Vec::with_capacity(d.n_samples * steps);
    for (u, y) in pairs {
        inputs.extend(u);
        targets.extend(y);
    }
    let ds = Dataset {
        header: DatasetHeader {
            version: DATASET_VERSION,
            system: SYSTEM_ID.into(),
            p: 1,
            q: 1,
            dt: d.dt,
            horizon: d.dt * (steps - 1) as f64,
            steps,
            n: d.n_samples,
            master_seed: cfg.master_seed,
            target_kind: d.target,
            channels: vec![d.channel],
            meta: serde_json::json!({
                "excitation": cfg.excitation,
                "structure": cfg.structure,
                "substeps": d.substeps,
            }),
        },
        inputs,
        targets,
    };
    ds.validate()?;
    Ok(ds)
}

/// Index ranges of the `[train | val | eval]` layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splits {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub eval: Range<usize>,
}

impl Splits {
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        let s = &cfg.split;
        Self {
            train: 0..s.n_train,
            val: s.n_train..s.n_train + s.n_val,
            eval: s.n_train + s.n_val..s.n_train + s.n_val + s.n_eval,
        }
    }

    pub fn check(&self, ds: &Dataset) -> CliResult<()> {
        let end = self.train.end.max(self.val.end).max(self.eval.end);
        if end > ds.len() {
            return Err(CliError::validation(format!("splits need {end} samples, dataset has {}", ds.len())));
        }
        Ok(())
    }
}

/// Multiplicative I/O normalization, stored with the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub input: f64,
    pub output: Vec<f64>,
}

impl Scaling {
    pub fn identity(q: usize) -> Self {
        Self {
            input: 1.0,
            output: vec![1.0; q],
        }
    }

    /// Reciprocal RMS of the training inputs and of each target channel.
    pub fn fit(ds: &Dataset, train: Range<usize>) -> Self {
        let (s, q) = (ds.header.steps, ds.header.q);
        let rms = |v: &mut dyn Iterator<Item = f64>| {
            let (sum, n) = v.fold((0.0, 0usize), |(a, n), x| (a + x * x, n + 1));
            let r = (sum / n.max(1) as f64).sqrt();
            if r > 0.0 && r.is_finite() {
                1.0 / r
            } else {
                1.0
            }
        };
        let input = rms(&mut ds.inputs[train.start * s..train.end * s].iter().copied());
        let output = (0..q)
            .map(|c| {
                rms(&mut train
                    .clone()
                    .flat_map(|l| ds.targets[(l * q + c) * s..(l * q + c + 1) * s].iter().copied()))
            })
            .collect();
        Self { input, output }
    }

    pub fn scale_input(&self, u: &Trajectory<f64>) -> CliResult<Trajectory<f64>> {
        Ok(u.map(|v| v * self.input)?)
    }

    pub fn scale_target(&self, y: &Trajectory<f64>) -> CliResult<Trajectory<f64>> {
        self.map_channels(y, |v, s| v * s)
    }

    pub fn unscale_output(&self, y: &Trajectory<f64>) -> CliResult<Trajectory<f64>> {
        self.map_channels(y, |v, s| v / s)
    }

    fn map_channels(&self, y: &Trajectory<f64>, f: impl Fn(f64, f64) -> f64) -> CliResult<Trajectory<f64>> {
        let mut out = y.clone();
        for (c, s) in self.output.iter().enumerate() {
            for v in out.channel_mut(c) {
                *v = f(*v, *s);
            }
        }
        Ok(out)
    }
}

/// The untrained model of `cfg` for a dataset with `q` target channels.
pub fn initial_model(cfg: &ExperimentConfig, q: usize) -> CliResult<Oscillator> {
    let m = &cfg.model;
    let act = match m.activation {
        ActivationKind::Relu => Activation::Relu,
        ActivationKind::Prelu => Activation::prelu_default(),
    };
    Ok(Oscillator::init(
        m.init_seed,
        Dims { p: 1, q, r: m.r },
        &m.gamma_hidden,
        &m.pi_hidden,
        act,
        m.gamma_inputs,
    )?)
}

/// Samples `range`, truncated to `steps` grid points, scaled.
pub fn scaled_samples(ds: &Dataset, range: Range<usize>, steps: usize, scaling: &Scaling) -> CliResult<Vec<Sample<f64>>> {
    range
        .map(|l| {
            let u = scaling.scale_input(&ds.input(l)?.truncate(steps)?)?;
            let y = scaling.scale_target(&ds.target(l)?.truncate(steps)?)?;
            Ok(Sample::new(u, y)?)
        })
        .collect()
}

/// Grid points covering `[0, horizon]` on the dataset grid.
pub fn steps_for_horizon(ds: &Dataset, horizon: f64) -> CliResult<usize> {
    let k = horizon / ds.header.dt;
    let n = k.round();
    if !(horizon > 0.0) || (k - n).abs() > 1e-6 * k.max(1.0) {
        return Err(CliError::validation(format!(
            "horizon {horizon} is not a positive multiple of dt = {}",
            ds.header.dt
        )));
    }
    let steps = n as usize + 1;
    if steps > ds.header.steps {
        return Err(CliError::validation(format!(
            "horizon {horizon} exceeds the dataset horizon {}",
            ds.header.horizon
        )));
    }
    Ok(steps)
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub outcome: TrainOutcome<f64>,
    pub scaling: Scaling,
    pub steps: usize,
}

/// Trains from the initial model of `cfg` on the train/val ranges, over the
/// first `steps` grid points.
pub fn train_model(cfg: &ExperimentConfig, ds: &Dataset, train_range: Range<usize>, val_range: Range<usize>, steps: usize) -> CliResult<Trained> {
    let scaling = if cfg.model.scale_io {
        Scaling::fit(ds, train_range.clone())
    } else {
        Scaling::identity(ds.header.q)
    };
    let data = TrainData {
        train: scaled_samples(ds, train_range, steps, &scaling)?,
        val: scaled_samples(ds, val_range, steps, &scaling)?,
    };
    let mut tcfg = cfg.training.clone();
    tcfg.batch_size = tcfg.batch_size.min(data.train.len());
    let model0 = initial_model(cfg, ds.header.q)?;
    let outcome = train(&data, &model0, &tcfg)?;
    Ok(Trained { outcome, scaling, steps })
}

/// Physical-unit prediction for input `l` over the first `steps` points.
pub fn predict(model: &Oscillator, scaling: &Scaling, ds: &Dataset, l: usize, steps: usize) -> CliResult<Trajectory<f64>> {
    let u = scaling.scale_input(&ds.input(l)?.truncate(steps)?)?;
    scaling.unscale_output(&model.predict(&u)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub relative_error: f64,
    pub n_samples: usize,
    pub n_steps: usize,
    /// Prediction horizon and (for extreme targets) the normalization horizon.
    pub t_pred: f64,
    pub t_norm: f64,
    pub target_kind: TargetKind,
    /// Terminal values at `t_pred`, targets then predictions.
    #[serde(skip)]
    pub terminal_true: Vec<f64>,
    #[serde(skip)]
    pub terminal_pred: Vec<f64>,
    pub ks_terminal: f64,
}

/// Rolls the model out on `range` over `[0, t_pred]` and computes the
/// relative error. Extreme targets normalize over `[0, t_norm]`.
pub fn evaluate(
    model: &Oscillator,
    scaling: &Scaling,
    ds: &Dataset,
    range: Range<usize>,
    t_pred: f64,
    t_norm: f64,
) -> CliResult<EvalReport> {
    if range.is_empty() {
        return Err(CliError::validation("evaluation set is empty"));
    }
    if range.end > ds.len() {
        return Err(CliError::validation(format!("evaluation range {range:?} exceeds N = {}", ds.len())));
    }
    let steps = steps_for_horizon(ds, t_pred)?;
    let preds: Vec<Trajectory<f64>> = range
        .clone()
        .into_par_iter()
        .map(|l| predict(model, scaling, ds, l, steps))
        .collect::<CliResult<_>>()?;
    let kind = ds.header.target_kind;
    let (report, targets) = match kind {
        TargetKind::Response => {
            let targets: Vec<Trajectory<f64>> = range.clone().map(|l| Ok(ds.target(l)?.truncate(steps)?)).collect::<CliResult<_>>()?;
            (relative_error_response(&targets, &preds)?, targets)
        }
        TargetKind::Extreme => {
            steps_for_horizon(ds, t_norm)?;
            let targets: Vec<Trajectory<f64>> = range.clone().map(|l| Ok(ds.target(l)?)).collect::<CliResult<_>>()?;
            (relative_error_extreme(&targets, &preds, t_pred, t_norm)?, targets)
        }
    };
    let last = steps - 1;
    let terminal_true: Vec<f64> = targets.iter().map(|y| y.get(0, last)).collect();
    let terminal_pred: Vec<f64> = preds.iter().map(|y| y.get(0, last)).collect();
    let ks = ks_distance(&EmpiricalCdf::new(&terminal_true)?, &EmpiricalCdf::new(&terminal_pred)?);
    Ok(EvalReport {
        relative_error: report.relative_error,
        n_samples: report.n_samples,
        n_steps: report.n_steps,
        t_pred,
        t_norm,
        target_kind: kind,
        terminal_true,
        terminal_pred,
        ks_terminal: ks,
    })
}

pub fn distribution(values: &[f64], histogram_bins: Option<usize>) -> CliResult<Distribution> {
    let method = match histogram_bins {
        Some(n_bins) => DensityMethod::Histogram { n_bins },
        None => DensityMethod::Kde,
    };
    Ok(empirical_distribution(values, method)?)
}
