use std::path::{Path, PathBuf};

use dusego::dynamics::NBodyConfig;
use dusego::model::ModelConfig;
use dusego::tasks::AutoencoderConfig;
use dusego::train::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, CliError, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Overrides the root that relative data and output paths resolve against.
pub const OUT_ROOT_ENV: &str = "DUSEGO_OUT_ROOT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Nbody,
    Autoencoder,
    DiagnoseEnergy,
    DiagnoseEquivariance,
    DiagnoseGradient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NBodySection {
    /// Sample `k` (counted across train, val, test in that order) uses seed `seed + k`.
    pub seed: u64,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub simulation: NBodyConfig,
}

impl Default for NBodySection {
    fn default() -> Self {
        Self {
            seed: 0,
            train: 3000,
            val: 600,
            test: 600,
            simulation: NBodyConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AutoencoderSection {
    pub seed: u64,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub graphs: AutoencoderConfig,
}

impl Default for AutoencoderSection {
    fn default() -> Self {
        Self {
            seed: 0,
            train: 5000,
            val: 500,
            test: 500,
            graphs: AutoencoderConfig::erdos_renyi(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnoseSection {
    pub depth_list: Vec<usize>,
    /// Random graphs (energy) or N-body samples (gradient) per seed.
    pub graphs: usize,
    pub nodes: usize,
    pub alphas: Vec<f64>,
    pub trials: usize,
    pub coord_tolerance: f64,
    pub feature_tolerance: f64,
}

impl Default for DiagnoseSection {
    fn default() -> Self {
        Self {
            depth_list: vec![64],
            graphs: 20,
            nodes: 5,
            alphas: vec![0.0, 1.0],
            trials: 100,
            coord_tolerance: 1e-8,
            feature_tolerance: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub task: Task,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_data_dir")]
    pub data_dir: PathBuf,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub nbody: NBodySection,
    #[serde(default)]
    pub autoencoder: AutoencoderSection,
    #[serde(default)]
    pub model: ModelConfig,
    /// Trained alongside `model` for a two-row comparison.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<ModelConfig>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub diagnose: DiagnoseSection,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_data_dir() -> PathBuf {
    PathBuf::from("data")
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs")
}

impl ExperimentConfig {
    pub fn new(task: Task) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            task,
            seeds: default_seeds(),
            data_dir: default_data_dir(),
            out_dir: default_out_dir(),
            nbody: NBodySection::default(),
            autoencoder: AutoencoderSection::default(),
            model: ModelConfig::default(),
            baseline: None,
            train: TrainConfig::default(),
            diagnose: DiagnoseSection::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| invalid("toml", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is representable in TOML")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(invalid(
                "schema_version",
                format!("expected {SCHEMA_VERSION}, got {}", self.schema_version),
            ));
        }
        if self.seeds.is_empty() {
            return Err(invalid("seeds", "at least one seed is required"));
        }
        let scoped = |section: &'static str| {
            move |e: dusego::Error| match e {
                dusego::Error::Config { field, reason } => invalid(format!("{section}.{field}"), reason),
                other => CliError::Core(other),
            }
        };
        self.nbody.simulation.validate().map_err(scoped("nbody.simulation"))?;
        self.autoencoder.graphs.validate().map_err(scoped("autoencoder.graphs"))?;
        self.model.validate().map_err(scoped("model"))?;
        if let Some(b) = &self.baseline {
            b.validate().map_err(scoped("baseline"))?;
        }
        self.train.validate().map_err(scoped("train"))?;
        for (name, n) in [("nbody.train", self.nbody.train), ("nbody.val", self.nbody.val)] {
            if n == 0 {
                return Err(invalid(name, "must be at least 1"));
            }
        }
        for (name, n) in [("autoencoder.train", self.autoencoder.train), ("autoencoder.val", self.autoencoder.val)] {
            if n == 0 {
                return Err(invalid(name, "must be at least 1"));
            }
        }
        let d = &self.diagnose;
        if d.depth_list.is_empty() || d.depth_list.contains(&0) {
            return Err(invalid("diagnose.depth_list", "needs at least one positive depth"));
        }
        if d.nodes < 2 {
            return Err(invalid("diagnose.nodes", "need at least 2"));
        }
        if d.graphs == 0 {
            return Err(invalid("diagnose.graphs", "must be at least 1"));
        }
        Ok(())
    }

    /// Resolves the data directory against [`OUT_ROOT_ENV`] when relative.
    pub fn data_path(&self) -> PathBuf {
        resolve(&self.data_dir)
    }

    pub fn out_path(&self) -> PathBuf {
        resolve(&self.out_dir)
    }
}

pub fn resolve(p: &Path) -> PathBuf {
    match std::env::var_os(OUT_ROOT_ENV) {
        Some(root) if p.is_relative() => PathBuf::from(root).join(p),
        _ => p.to_path_buf(),
    }
}

/// Hex SHA-256 of the value's JSON encoding.
pub fn hash_of<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config serializes");
    hex::encode(Sha256::digest(&bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_uses_defaults() {
        let cfg = ExperimentConfig::from_toml("schema_version = 1\ntask = \"nbody\"\n").unwrap();
        assert_eq!(cfg, ExperimentConfig::new(Task::Nbody));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ExperimentConfig::from_toml("schema_version = 1\ntask = \"nbody\"\n[model]\ndepht = 3\n").unwrap_err();
        assert!(err.to_string().contains("depht"), "{err}");
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn field_level_validation() {
        let err = ExperimentConfig::from_toml("schema_version = 1\ntask = \"nbody\"\n[nbody.simulation]\nsoftening = 0.0\n")
            .unwrap_err();
        assert!(err.to_string().contains("nbody.simulation.softening"), "{err}");
        let err = ExperimentConfig::from_toml("schema_version = 2\ntask = \"nbody\"\n").unwrap_err();
        assert!(err.to_string().contains("schema_version"));
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::new(Task::Nbody);
        let mut b = a.clone();
        assert_eq!(hash_of(&a), hash_of(&b));
        b.model.depth += 1;
        assert_ne!(hash_of(&a), hash_of(&b));
    }
}
