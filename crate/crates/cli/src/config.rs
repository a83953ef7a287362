//! Experiment configuration: one JSON document, with dotted-key overrides.

use std::path::{Path, PathBuf};

use neural_oscillator::dataset::TargetKind;
use neural_oscillator::excitation::WvSpectrum;
use neural_oscillator::structsim::BoucWenConfig;
use neural_oscillator::training::TrainConfig;
use neural_oscillator::GammaInputs;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Total number of samples in the generated dataset.
    pub n_samples: usize,
    pub dt: f64,
    pub horizon: f64,
    pub target: TargetKind,
    /// Displacement channel used as the target (0-based; 4 is the top floor).
    pub channel: usize,
    /// RK4 steps per output interval.
    pub substeps: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n_samples: 1000,
            dt: 0.01,
            horizon: 10.0,
            target: TargetKind::Response,
            channel: 4,
            substeps: 1,
        }
    }
}

impl DataConfig {
    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    #[default]
    Relu,
    Prelu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub r: usize,
    pub gamma_hidden: Vec<usize>,
    pub pi_hidden: Vec<usize>,
    pub activation: ActivationKind,
    pub gamma_inputs: GammaInputs,
    /// Shared initialization seed of Γ and Π.
    pub init_seed: u64,
    /// Normalize input and targets by their training-set RMS.
    pub scale_io: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            r: 10,
            gamma_hidden: vec![40],
            pi_hidden: vec![20],
            activation: ActivationKind::Relu,
            gamma_inputs: GammaInputs::default(),
            init_seed: 0,
            scale_io: true,
        }
    }
}

/// Dataset layout: `[train | val | eval]` from index 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub n_train: usize,
    pub n_val: usize,
    pub n_eval: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            n_train: 100,
            n_val: 20,
            n_eval: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Horizon of the error denominator for extreme-value targets; defaults
    /// to the dataset horizon.
    pub norm_horizon: Option<f64>,
    /// Bins for histogram densities; KDE when absent.
    pub histogram_bins: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub excitation: WvSpectrum,
    pub structure: BoucWenConfig,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub training: TrainConfig,
    pub split: SplitConfig,
    pub eval: EvalConfig,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            master_seed: 0,
            excitation: WvSpectrum::default(),
            structure: BoucWenConfig::default(),
            data: DataConfig::default(),
            model: ModelConfig::default(),
            training: TrainConfig::default(),
            split: SplitConfig::default(),
            eval: EvalConfig::default(),
            out_dir: PathBuf::from("out"),
        }
    }
}

fn bad(field: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::validation(format!("{field}: {msg}"))
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| bad("config", e))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path.display(), e))?;
        Self::from_json(&text)
    }

    /// Applies `key.path=value` overrides; values parse as JSON, falling back
    /// to a plain string. Unknown keys are rejected.
    pub fn with_overrides(&self, sets: &[String], seed: Option<u64>) -> CliResult<Self> {
        let mut doc = serde_json::to_value(self).map_err(|e| bad("config", e))?;
        for set in sets {
            let (key, raw) = set
                .split_once('=')
                .ok_or_else(|| bad("--set", format!("expected key=value, got `{set}`")))?;
            let value = serde_json::from_str::<Value>(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            let mut node = &mut doc;
            for part in key.split('.') {
                node = node
                    .as_object_mut()
                    .and_then(|m| m.get_mut(part))
                    .ok_or_else(|| bad("--set", format!("unknown key `{key}`")))?;
            }
            *node = value;
        }
        let mut cfg: Self = serde_json::from_value(doc).map_err(|e| bad("config", e))?;
        if let Some(s) = seed {
            cfg.master_seed = s;
        }
        Ok(cfg)
    }

    /// Checks every invariant that does not need the file system.
    pub fn validate(&self) -> CliResult<()> {
        let d = &self.data;
        if !(d.dt > 0.0 && d.dt.is_finite()) {
            return Err(bad("data.dt", format!("must be positive, got {}", d.dt)));
        }
        if !(d.horizon > 0.0 && d.horizon.is_finite()) {
            return Err(bad("data.horizon", format!("must be positive, got {}", d.horizon)));
        }
        let k = d.horizon / d.dt;
        if (k - k.round()).abs() > 1e-6 * k.max(1.0) {
            return Err(bad("data.horizon", format!("{} is not a multiple of dt = {}", d.horizon, d.dt)));
        }
        if d.n_samples == 0 {
            return Err(bad("data.n_samples", "must be positive"));
        }
        if d.substeps == 0 {
            return Err(bad("data.substeps", "must be positive"));
        }
        self.structure.validate().map_err(|e| bad("structure", e))?;
        if d.channel >= self.structure.n_dof {
            return Err(bad("data.channel", format!("{} ≥ n_dof = {}", d.channel, self.structure.n_dof)));
        }
        self.excitation.validate().map_err(|e| bad("excitation", e))?;
        let nyq = self.excitation.nyquist(d.dt);
        if self.excitation.f_max > nyq * (1.0 + 1e-12) {
            return Err(bad("excitation.f_max", format!("{} exceeds the Nyquist frequency {nyq}", self.excitation.f_max)));
        }
        let s = &self.split;
        if s.n_train == 0 {
            return Err(bad("split.n_train", "must be positive"));
        }
        let total = s.n_train + s.n_val + s.n_eval;
        if total > d.n_samples {
            return Err(bad("split", format!("train + val + eval = {total} exceeds data.n_samples = {}", d.n_samples)));
        }
        let m = &self.model;
        if m.r == 0 {
            return Err(bad("model.r", "must be positive"));
        }
        if m.gamma_hidden.contains(&0) || m.pi_hidden.contains(&0) {
            return Err(bad("model", "hidden widths must be positive"));
        }
        if !(m.gamma_inputs.position || m.gamma_inputs.velocity || m.gamma_inputs.input) {
            return Err(bad("model.gamma_inputs", "Γ needs at least one input block"));
        }
        self.training.validate().map_err(|e| bad("training", e))?;
        if self.training.select_on == neural_oscillator::training::SelectOn::ValLoss && s.n_val == 0 {
            return Err(bad("training.select_on", "validation selection needs split.n_val > 0"));
        }
        if let Some(h) = self.eval.norm_horizon {
            if !(h > 0.0) || h > d.horizon * (1.0 + 1e-12) {
                return Err(bad("eval.norm_horizon", format!("must lie in (0, {}], got {h}", d.horizon)));
            }
        }
        if self.eval.histogram_bins == Some(0) {
            return Err(bad("eval.histogram_bins", "must be positive"));
        }
        Ok(())
    }

    /// Canonical JSON (struct field order) used for hashing.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON, hex encoded.
    pub fn hash(&self) -> String {
        hex_digest(self.canonical_json().as_bytes())
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Creates `dir` and checks that a file can be written into it.
pub fn ensure_writable_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir.display(), e))?;
    let probe = dir.join(".write-probe");
    std::fs::write(&probe, b"").map_err(|e| CliError::io(dir.display(), e))?;
    std::fs::remove_file(&probe).map_err(|e| CliError::io(probe.display(), e))
}
