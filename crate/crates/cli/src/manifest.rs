use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::config::{hex_digest, ExperimentConfig};
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Serialize)]
pub struct Seeds {
    pub master_seed: u64,
    pub init_seed: u64,
    pub train_seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Versions {
    pub package: &'static str,
    pub dataset_format: u32,
    pub checkpoint_format: u32,
}

/// Provenance record written next to every command's outputs. Contains no
/// timestamps or host data, so identical runs produce identical manifests.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub seeds: Seeds,
    pub versions: Versions,
    /// File name → SHA-256 of the inputs read.
    pub inputs: BTreeMap<String, String>,
    /// File name → SHA-256 of the outputs written.
    pub outputs: BTreeMap<String, String>,
    /// Command-specific summary values.
    pub summary: serde_json::Value,
}

impl Manifest {
    pub fn new(command: &str, cfg: &ExperimentConfig) -> Self {
        Self {
            command: command.into(),
            config_hash: cfg.hash(),
            config: cfg.clone(),
            seeds: Seeds {
                master_seed: cfg.master_seed,
                init_seed: cfg.model.init_seed,
                train_seed: cfg.training.seed,
            },
            versions: Versions {
                package: env!("CARGO_PKG_VERSION"),
                dataset_format: neural_oscillator::dataset::DATASET_VERSION,
                checkpoint_format: neural_oscillator::oscillator::OSC_FORMAT_VERSION,
            },
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            summary: serde_json::Value::Null,
        }
    }

    pub fn record_input(&mut self, path: &Path) -> CliResult<()> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path.display(), e))?;
        self.inputs.insert(file_name(path), hex_digest(&bytes));
        Ok(())
    }

    pub fn record_output(&mut self, path: &Path) -> CliResult<()> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path.display(), e))?;
        self.outputs.insert(file_name(path), hex_digest(&bytes));
        Ok(())
    }

    /// Writes `<command>.manifest.json` into `dir`.
    pub fn write(&self, dir: &Path) -> CliResult<std::path::PathBuf> {
        let path = dir.join(format!("{}.manifest.json", self.command));
        let mut text = serde_json::to_string_pretty(self).map_err(|e| CliError::io("manifest", e))?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| CliError::io(path.display(), e))?;
        Ok(path)
    }
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}
