//! Run configuration: one JSON document with `model`, `engine` and
//! `experiment` sections. Unknown keys are rejected everywhere.

use std::path::Path as FsPath;

use imbp_core::discrete::DriverTiming;
use imbp_core::grid::GridConfig;
use imbp_core::{ContinuousModelSpec, DiscreteModelSpec, EngineKind, EngineOptions, EulerConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub model: ModelConfig,
    #[serde(default)]
    pub engine: EngineConfig,
    #[serde(default)]
    pub experiment: ExperimentConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    Discrete(DiscreteModelSpec),
    Continuous(ContinuousModelSpec),
    FellerFamily(FellerConfig),
}

/// Critical ±1 walk family with competition `c`, started from `⌈y n⌉`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FellerConfig {
    pub y: f64,
    #[serde(default)]
    pub c: f64,
    #[serde(default)]
    pub n_values: Vec<u64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    #[serde(default)]
    pub kind: Option<EngineKind>,
    #[serde(default)]
    pub rate_cap: Option<f64>,
    #[serde(default)]
    pub timing: DriverTiming,
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default)]
    pub truncation_level: Option<f64>,
    #[serde(default)]
    pub reject_ratio: Option<f64>,
    #[serde(default)]
    pub noise_substeps: Option<u32>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub initial: Option<Vec<f64>>,
    #[serde(default)]
    pub horizon: Option<f64>,
    #[serde(default)]
    pub paths: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub delta: Option<f64>,
    /// Grid sequence for the convergence report of `simulate-grid`.
    #[serde(default)]
    pub grids: Vec<GridConfig>,
    /// Grid sequence for the shared-noise difference report of `scaling`.
    #[serde(default)]
    pub difference_grids: Vec<GridConfig>,
    #[serde(default)]
    pub difference_paths: Option<usize>,
    #[serde(default)]
    pub lattice_cap: Option<i64>,
    #[serde(default)]
    pub leak_threshold: Option<f64>,
    #[serde(default)]
    pub tv_tolerance: Option<f64>,
    #[serde(default)]
    pub ks_alpha: Option<f64>,
    /// The two samplers compared by `equivalence`.
    #[serde(default)]
    pub engines: Option<[EngineKind; 2]>,
    /// Feed both samplers of `equivalence` from the same seed tree.
    #[serde(default)]
    pub same_stream: bool,
    #[serde(default)]
    pub reference_dt: Option<f64>,
    #[serde(default)]
    pub reference_paths: Option<usize>,
    #[serde(default)]
    pub bootstrap_reps: Option<usize>,
    #[serde(default)]
    pub coupled_paths: Option<usize>,
}

/// A parsed config together with its canonical JSON and digest.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: Config,
    pub value: serde_json::Value,
    pub digest: String,
}

impl LoadedConfig {
    pub fn from_file(path: &FsPath) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_value(value)
    }

    pub fn from_value(value: serde_json::Value) -> Result<Self, CliError> {
        // Keys of a `Value` are sorted, so this serialization is canonical.
        let canonical = serde_json::to_vec(&value).expect("JSON value serializes");
        let digest = hex::encode(Sha256::digest(&canonical));
        let config: Config = serde_path_to_error::deserialize(&value).map_err(|e| {
            let field = e.path().to_string();
            CliError::Config(format!("config field `{field}`: {}", e.inner()))
        })?;
        Ok(LoadedConfig {
            config,
            value,
            digest,
        })
    }
}

impl EngineConfig {
    pub fn options(&self) -> EngineOptions {
        let mut opts = EngineOptions::default();
        if let Some(cap) = self.rate_cap {
            opts.rate_cap = cap;
        }
        opts
    }

    pub fn euler(&self, dt: f64) -> EulerConfig {
        let mut cfg = EulerConfig::new(dt);
        cfg.truncation_level = self.truncation_level;
        cfg.reject_ratio = self.reject_ratio;
        if let Some(k) = self.noise_substeps {
            cfg.noise_substeps = k;
        }
        cfg
    }
}

impl Config {
    pub fn discrete(&self) -> Result<DiscreteModelSpec, CliError> {
        match &self.model {
            ModelConfig::Discrete(spec) => Ok(spec.clone().validate()?),
            _ => Err(CliError::Config("model: this command needs a `discrete` model".into())),
        }
    }

    pub fn continuous(&self) -> Result<ContinuousModelSpec, CliError> {
        match &self.model {
            ModelConfig::Continuous(spec) => Ok(spec.clone().validate()?),
            _ => Err(CliError::Config("model: this command needs a `continuous` model".into())),
        }
    }

    pub fn initial_real(&self, d: usize) -> Result<Vec<f64>, CliError> {
        let z = self
            .experiment
            .initial
            .clone()
            .ok_or_else(|| CliError::Config("experiment.initial: missing".into()))?;
        if z.len() != d {
            return Err(CliError::Config(format!(
                "experiment.initial: expected {d} entries, got {}",
                z.len()
            )));
        }
        if z.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(CliError::Config("experiment.initial: entries must be finite and nonnegative".into()));
        }
        Ok(z)
    }

    pub fn initial_lattice(&self, d: usize) -> Result<Vec<i64>, CliError> {
        let z = self.initial_real(d)?;
        if z.iter().any(|x| x.fract() != 0.0) {
            return Err(CliError::Config("experiment.initial: entries must be integers".into()));
        }
        Ok(z.iter().map(|&x| x as i64).collect())
    }
}
