//! Subcommand implementations: file in, files and a manifest out.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use neural_oscillator::bounds::{
    delta_pi_phi, delta_pi_phi_thm2, estimation_error_thm1, estimation_error_thm2, generalization_bound_thm1,
    generalization_bound_thm2, BoundInputs, Thm2Constants,
};
use neural_oscillator::dataset::{Dataset, TargetKind};
use neural_oscillator::metrics::{fit_power_law, write_distribution_csv, write_xy_csv, PowerLawFit};
use neural_oscillator::training::write_history_csv;
use neural_oscillator::Oscillator;
use serde::{Deserialize, Serialize};

use crate::config::{ensure_writable_dir, ExperimentConfig};
use crate::error::{CliError, CliResult};
use crate::manifest::Manifest;
use crate::pipeline::{self, Scaling, Splits};

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path.display(), e))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> CliResult<()> {
    w.flush().map_err(|e| CliError::io(path.display(), e))
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::io(path.display(), e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path.display(), e))
}

fn load_dataset(path: &Path) -> CliResult<Dataset> {
    Dataset::load(path).map_err(|e| match e {
        neural_oscillator::Error::Io(io) => CliError::io(path.display(), io),
        other => CliError::Io(format!("{}: {other}", path.display())),
    })
}

/// Checkpoint metadata written by `train`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelMeta {
    pub scaling: Scaling,
    /// Horizon the model was trained on.
    pub horizon: f64,
    pub config_hash: String,
    pub best_epoch: Option<usize>,
    pub best_loss: f64,
}

pub fn save_model(path: &Path, model: &Oscillator, lineage: &[u64], meta: &ModelMeta) -> CliResult<()> {
    let mut w = create(path)?;
    let meta = serde_json::to_value(meta).map_err(|e| CliError::io("model metadata", e))?;
    model.write_checkpoint(&mut w, lineage, meta)?;
    finish(w, path)
}

/// Loads a checkpoint; missing scaling metadata means identity scaling.
pub fn load_model(path: &Path) -> CliResult<(Oscillator, Scaling, Option<f64>)> {
    let f = File::open(path).map_err(|e| CliError::io(path.display(), e))?;
    let (model, header) = Oscillator::read_checkpoint(std::io::BufReader::new(f)).map_err(|e| match e {
        neural_oscillator::Error::Io(io) => CliError::io(path.display(), io),
        other => CliError::Io(format!("{}: {other}", path.display())),
    })?;
    let scaling = header
        .meta
        .get("scaling")
        .map(|v| serde_json::from_value::<Scaling>(v.clone()))
        .transpose()
        .map_err(|e| CliError::Io(format!("{}: bad scaling metadata: {e}", path.display())))?
        .unwrap_or_else(|| Scaling::identity(model.dims().q));
    let horizon = header.meta.get("horizon").and_then(|v| v.as_f64());
    Ok((model, scaling, horizon))
}

// --- gen-data ------------------------------------------------------------------

pub fn gen_data(cfg: &ExperimentConfig, dataset_path: &Path) -> CliResult<Manifest> {
    cfg.validate()?;
    ensure_writable_dir(&cfg.out_dir)?;
    if let Some(parent) = dataset_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_writable_dir(parent)?;
    }
    let ds = pipeline::generate_dataset(cfg)?;
    ds.save(dataset_path).map_err(|e| CliError::io(dataset_path.display(), e))?;
    let mut m = Manifest::new("gen-data", cfg);
    m.record_output(dataset_path)?;
    m.summary = serde_json::json!({"n": ds.len(), "steps": ds.header.steps, "target_kind": ds.header.target_kind});
    m.write(&cfg.out_dir)?;
    Ok(m)
}

// --- train ---------------------------------------------------------------------

pub fn train(cfg: &ExperimentConfig, dataset_path: &Path, model_path: &Path, horizon: Option<f64>) -> CliResult<Manifest> {
    cfg.validate()?;
    ensure_writable_dir(&cfg.out_dir)?;
    let ds = load_dataset(dataset_path)?;
    let splits = Splits::from_config(cfg);
    Splits { eval: 0..0, ..splits.clone() }.check(&ds)?;
    let horizon = horizon.unwrap_or(ds.header.horizon);
    let steps = pipeline::steps_for_horizon(&ds, horizon)?;
    let trained = pipeline::train_model(cfg, &ds, splits.train, splits.val, steps)?;

    let meta = ModelMeta {
        scaling: trained.scaling.clone(),
        horizon,
        config_hash: cfg.hash(),
        best_epoch: trained.outcome.best_epoch,
        best_loss: trained.outcome.best_loss,
    };
    save_model(model_path, &trained.outcome.best_model, &[cfg.model.init_seed, cfg.training.seed], &meta)?;
    let history_path = cfg.out_dir.join("history.csv");
    let mut w = create(&history_path)?;
    write_history_csv(&mut w, &trained.outcome.history)?;
    finish(w, &history_path)?;

    let mut m = Manifest::new("train", cfg);
    m.record_input(dataset_path)?;
    m.record_output(model_path)?;
    m.record_output(&history_path)?;
    m.summary = serde_json::json!({
        "initial_train_loss": trained.outcome.initial_train_loss,
        "best_loss": trained.outcome.best_loss,
        "best_epoch": trained.outcome.best_epoch,
        "horizon": horizon,
    });
    m.write(&cfg.out_dir)?;
    Ok(m)
}

// --- eval ----------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalRange {
    /// The configured eval split.
    Split,
    /// Every sample in the dataset.
    All,
}

pub fn eval(cfg: &ExperimentConfig, model_path: &Path, dataset_path: &Path, range: EvalRange) -> CliResult<Manifest> {
    ensure_writable_dir(&cfg.out_dir)?;
    let ds = load_dataset(dataset_path)?;
    let (model, scaling, trained_horizon) = load_model(model_path)?;
    if model.dims().p != ds.header.p || model.dims().q != ds.header.q {
        return Err(CliError::validation(format!(
            "model maps {} → {} channels, dataset has {} → {}",
            model.dims().p,
            model.dims().q,
            ds.header.p,
            ds.header.q
        )));
    }
    let range = match range {
        EvalRange::All => 0..ds.len(),
        EvalRange::Split => {
            let s = Splits::from_config(cfg);
            s.check(&ds)?;
            s.eval
        }
    };
    let t_pred = trained_horizon.unwrap_or(ds.header.horizon).min(ds.header.horizon);
    let t_norm = cfg.eval.norm_horizon.unwrap_or(ds.header.horizon);
    let rep = pipeline::evaluate(&model, &scaling, &ds, range, t_pred, t_norm)?;
    let mut m = Manifest::new("eval", cfg);
    m.record_input(model_path)?;
    m.record_input(dataset_path)?;

    let metrics_path = cfg.out_dir.join("metrics.csv");
    let mut w = create(&metrics_path)?;
    let io = |e| CliError::io(metrics_path.display(), e);
    writeln!(w, "metric,value").map_err(io)?;
    writeln!(w, "relative_error,{:e}", rep.relative_error).map_err(io)?;
    writeln!(w, "n_samples,{}", rep.n_samples).map_err(io)?;
    writeln!(w, "n_steps,{}", rep.n_steps).map_err(io)?;
    writeln!(w, "t_pred,{:e}", rep.t_pred).map_err(io)?;
    writeln!(w, "t_norm,{:e}", rep.t_norm).map_err(io)?;
    writeln!(w, "ks_terminal,{:e}", rep.ks_terminal).map_err(io)?;
    finish(w, &metrics_path)?;
    m.record_output(&metrics_path)?;

    if rep.target_kind == TargetKind::Extreme {
        for (name, values) in [("dist_true.csv", &rep.terminal_true), ("dist_pred.csv", &rep.terminal_pred)] {
            let path = cfg.out_dir.join(name);
            let dist = pipeline::distribution(values, cfg.eval.histogram_bins)?;
            let mut w = create(&path)?;
            write_distribution_csv(&mut w, &dist)?;
            finish(w, &path)?;
            m.record_output(&path)?;
        }
    }
    m.summary = serde_json::to_value(&rep).map_err(|e| CliError::io("summary", e))?;
    m.write(&cfg.out_dir)?;
    Ok(m)
}

// --- sweep ---------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    N,
    T,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepResult {
    pub axis: SweepAxis,
    pub rows: Vec<(f64, f64)>,
    pub fit: PowerLawFit,
}

fn check_sweep_values(values: &[f64]) -> CliResult<()> {
    if values.len() < 2 {
        return Err(CliError::validation("sweep needs at least two values"));
    }
    if values.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(CliError::validation("sweep values must be positive"));
    }
    if values.windows(2).any(|w| w[1] <= w[0]) {
        return Err(CliError::validation("sweep values must be strictly ascending"));
    }
    Ok(())
}

/// Runs train + eval per axis value on one shared dataset. With `planted`
/// `(c, e)` no data is touched and the errors are `c·value^e`.
pub fn sweep(
    cfg: &ExperimentConfig,
    axis: SweepAxis,
    values: &[f64],
    planted: Option<(f64, f64)>,
    dataset_path: Option<&Path>,
) -> CliResult<(SweepResult, Manifest)> {
    check_sweep_values(values)?;
    let mut m = Manifest::new("sweep", cfg);
    let mut rows = Vec::with_capacity(values.len());
    if let Some((c, e)) = planted {
        ensure_writable_dir(&cfg.out_dir)?;
        rows.extend(values.iter().map(|v| (*v, c * v.powf(e))));
    } else {
        let mut cfg = cfg.clone();
        if axis == SweepAxis::N {
            if values.iter().any(|v| v.fract() != 0.0) {
                return Err(CliError::validation("N-axis values must be integers"));
            }
            cfg.split.n_train = *values.last().expect("checked length") as usize;
            let needed = cfg.split.n_train + cfg.split.n_val + cfg.split.n_eval;
            cfg.data.n_samples = cfg.data.n_samples.max(needed);
            cfg.training.batch_size = cfg.training.batch_size.min(values[0] as usize);
        } else {
            for v in values {
                let k = v / cfg.data.dt;
                if (k - k.round()).abs() > 1e-6 * k.max(1.0) || *v > cfg.data.horizon * (1.0 + 1e-12) {
                    return Err(CliError::validation(format!(
                        "T = {v} must be a multiple of dt = {} no larger than the horizon {}",
                        cfg.data.dt, cfg.data.horizon
                    )));
                }
            }
        }
        cfg.validate()?;
        ensure_writable_dir(&cfg.out_dir)?;
        let ds = match dataset_path {
            Some(p) => {
                m.record_input(p)?;
                load_dataset(p)?
            }
            None => pipeline::generate_dataset(&cfg)?,
        };
        let splits = Splits::from_config(&cfg);
        splits.check(&ds)?;
        let t_norm = cfg.eval.norm_horizon.unwrap_or(ds.header.horizon);
        for (k, v) in values.iter().enumerate() {
            let (train_range, horizon) = match axis {
                SweepAxis::N => (0..*v as usize, ds.header.horizon),
                SweepAxis::T => (splits.train.clone(), *v),
            };
            let steps = pipeline::steps_for_horizon(&ds, horizon)?;
            let trained = pipeline::train_model(&cfg, &ds, train_range, splits.val.clone(), steps)?;
            let rep = pipeline::evaluate(
                &trained.outcome.best_model,
                &trained.scaling,
                &ds,
                splits.eval.clone(),
                horizon,
                t_norm,
            )?;
            let hist = cfg.out_dir.join(format!("sweep_history_{k}.csv"));
            let mut w = create(&hist)?;
            write_history_csv(&mut w, &trained.outcome.history)?;
            finish(w, &hist)?;
            m.record_output(&hist)?;
            rows.push((*v, rep.relative_error));
        }
        m.config = cfg;
    }
    let fit = fit_power_law(&rows)?;
    let csv = m.config.out_dir.join("sweep.csv");
    let mut w = create(&csv)?;
    let x = match axis {
        SweepAxis::N => "n",
        SweepAxis::T => "t",
    };
    write_xy_csv(&mut w, (x, "relative_error"), &rows)?;
    finish(w, &csv)?;
    m.record_output(&csv)?;
    let result = SweepResult { axis, rows, fit };
    let fit_path = m.config.out_dir.join("sweep_fit.json");
    write_json(&fit_path, &result)?;
    m.record_output(&fit_path)?;
    m.summary = serde_json::json!({"fit": result.fit, "planted": planted.is_some()});
    let dir = m.config.out_dir.clone();
    m.write(&dir)?;
    Ok((result, m))
}

// --- bounds --------------------------------------------------------------------

/// One row of a bounds input file: the class constants plus optional
/// approximation data.
#[derive(Debug, Clone, Deserialize)]
pub struct BoundRow {
    #[serde(flatten)]
    pub inputs: BoundInputs,
    #[serde(default)]
    pub eps_y: f64,
    #[serde(default)]
    pub thm2: Option<Thm2Constants>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundOutput {
    pub ln_delta: f64,
    pub estimation_thm1: f64,
    pub bound_thm1: f64,
    pub ln_delta_thm2: f64,
    pub estimation_thm2: f64,
    pub bound_thm2: Option<f64>,
}

pub fn evaluate_bound_row(row: &BoundRow) -> CliResult<BoundOutput> {
    let x = &row.inputs;
    Ok(BoundOutput {
        ln_delta: delta_pi_phi(x)?.ln,
        estimation_thm1: estimation_error_thm1(x)?,
        bound_thm1: generalization_bound_thm1(x, row.eps_y)?,
        ln_delta_thm2: delta_pi_phi_thm2(x)?.ln,
        estimation_thm2: estimation_error_thm2(x)?,
        bound_thm2: row.thm2.as_ref().map(|c| generalization_bound_thm2(x, c)).transpose()?,
    })
}

pub const BOUNDS_HEADER: &str = "row,ln_delta,estimation_thm1,bound_thm1,ln_delta_thm2,estimation_thm2,bound_thm2";

pub fn bounds(cfg: &ExperimentConfig, input: &Path) -> CliResult<(Vec<BoundOutput>, Manifest)> {
    ensure_writable_dir(&cfg.out_dir)?;
    let text = std::fs::read_to_string(input).map_err(|e| CliError::io(input.display(), e))?;
    let rows: Vec<BoundRow> =
        serde_json::from_str(&text).map_err(|e| CliError::validation(format!("{}: {e}", input.display())))?;
    let outputs = rows
        .iter()
        .enumerate()
        .map(|(i, r)| evaluate_bound_row(r).map_err(|e| CliError::validation(format!("row {i}: {e}"))))
        .collect::<CliResult<Vec<_>>>()?;
    let path = cfg.out_dir.join("bounds.csv");
    let mut w = create(&path)?;
    let io = |e| CliError::io(path.display(), e);
    writeln!(w, "{BOUNDS_HEADER}").map_err(io)?;
    for (i, o) in outputs.iter().enumerate() {
        let b2 = o.bound_thm2.map(|v| format!("{v:e}")).unwrap_or_default();
        writeln!(
            w,
            "{i},{:e},{:e},{:e},{:e},{:e},{b2}",
            o.ln_delta, o.estimation_thm1, o.bound_thm1, o.ln_delta_thm2, o.estimation_thm2
        )
        .map_err(io)?;
    }
    finish(w, &path)?;
    let mut m = Manifest::new("bounds", cfg);
    m.record_input(input)?;
    m.record_output(&path)?;
    m.summary = serde_json::json!({"rows": outputs.len()});
    m.write(&cfg.out_dir)?;
    Ok((outputs, m))
}

// --- dist ----------------------------------------------------------------------

/// Distribution of target values at `time` (default: the last grid point)
/// over the eval split or the whole dataset; with a model, also of its
/// predictions and the KS distance between the two.
pub fn dist(
    cfg: &ExperimentConfig,
    dataset_path: &Path,
    model_path: Option<&Path>,
    time: Option<f64>,
    range: EvalRange,
) -> CliResult<Manifest> {
    ensure_writable_dir(&cfg.out_dir)?;
    let ds = load_dataset(dataset_path)?;
    let mut m = Manifest::new("dist", cfg);
    m.record_input(dataset_path)?;
    let range = match range {
        EvalRange::All => 0..ds.len(),
        EvalRange::Split => {
            let s = Splits::from_config(cfg);
            s.check(&ds)?;
            s.eval
        }
    };
    if range.is_empty() {
        return Err(CliError::validation("no samples selected"));
    }
    let time = time.unwrap_or(ds.header.horizon);
    let steps = pipeline::steps_for_horizon(&ds, time)?;
    let idx = steps - 1;
    let s = ds.header.steps;
    let truth: Vec<f64> = range.clone().map(|l| ds.targets[l * ds.header.q * s + idx]).collect();
    let mut outputs: Vec<(PathBuf, Vec<f64>)> = vec![(cfg.out_dir.join("dist_true.csv"), truth.clone())];
    let mut summary = serde_json::json!({"time": time, "n_samples": truth.len()});
    if let Some(mp) = model_path {
        m.record_input(mp)?;
        let (model, scaling, _) = load_model(mp)?;
        use rayon::prelude::*;
        let preds: Vec<f64> = range
            .clone()
            .into_par_iter()
            .map(|l| pipeline::predict(&model, &scaling, &ds, l, steps).map(|y| y.get(0, idx)))
            .collect::<CliResult<_>>()?;
        let ks = neural_oscillator::metrics::ks_distance(
            &neural_oscillator::metrics::EmpiricalCdf::new(&truth)?,
            &neural_oscillator::metrics::EmpiricalCdf::new(&preds)?,
        );
        summary["ks_distance"] = serde_json::json!(ks);
        outputs.push((cfg.out_dir.join("dist_pred.csv"), preds));
    }
    for (path, values) in &outputs {
        let d = pipeline::distribution(values, cfg.eval.histogram_bins)?;
        let mut w = create(path)?;
        write_distribution_csv(&mut w, &d)?;
        finish(w, path)?;
        m.record_output(path)?;
    }
    m.summary = summary;
    m.write(&cfg.out_dir)?;
    Ok(m)
}
