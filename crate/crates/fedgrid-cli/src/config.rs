//! Experiment configuration: one JSON document with network, environment,
//! training, pool and output sections.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use fedgrid_core::env::EnvConfig;
use fedgrid_core::fed::TrainConfig;
use fedgrid_core::grid::NetworkModel;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub network: NetworkSection,
    #[serde(default)]
    pub env: EnvConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub pools: PoolConfig,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3]
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

/// Either a named preset or a fully specified custom model.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub custom: Option<NetworkModel>,
}

impl NetworkSection {
    pub fn resolve(&self) -> Result<NetworkModel> {
        match (&self.preset, &self.custom) {
            (Some(name), None) => match name.as_str() {
                "nine-bus" => Ok(NetworkModel::nine_bus_default()),
                other => bail!("unknown network preset '{other}' (available: nine-bus)"),
            },
            (None, Some(model)) => {
                model.validate().context("custom network model failed validation")?;
                Ok(model.clone())
            }
            _ => bail!("network section needs exactly one of 'preset' or 'custom'"),
        }
    }
}

/// Scenario-pool sizes and the pool seed. The pools are a property of the
/// experiment, not of the run seed: every training seed sees the same
/// pools, and the test pool comes from a stream disjoint from training.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoolConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl Default for PoolConfig {
    fn default() -> Self {
        PoolConfig { n_train: 7, n_test: 200, seed: 7 }
    }
}

impl ExperimentConfig {
    /// Built-in defaults on the nine-bus preset.
    pub fn default_nine_bus() -> Self {
        ExperimentConfig {
            network: NetworkSection { preset: Some("nine-bus".into()), custom: None },
            env: EnvConfig::default(),
            train: TrainConfig::default(),
            pools: PoolConfig::default(),
            seeds: default_seeds(),
            output: default_output(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .with_context(|| format!("config parse error in {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.network.resolve()?;
        self.env.validate().context("env section invalid")?;
        self.train.validate().context("train section invalid")?;
        if self.seeds.is_empty() {
            bail!("seed list must not be empty");
        }
        if self.pools.n_train == 0 || self.pools.n_test == 0 {
            bail!("pool sizes must be >= 1");
        }
        Ok(())
    }
}
