//! JSON config files of the subcommands.

use std::path::Path;

use anyhow::{Context, Result};
use hybrid_bai::design::FwConfig;
use hybrid_bai::{AlgoConfig, CostModel, GeneratorSpec, Modality};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub instance: GeneratorSpec,
    #[serde(default)]
    pub costs: Option<CostModel>,
    #[serde(default)]
    pub algorithm: AlgoConfig,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignConfig {
    pub instance: GeneratorSpec,
    #[serde(default)]
    pub costs: Option<CostModel>,
    /// Solve over one modality's actions only.
    #[serde(default)]
    pub modality: Option<Modality>,
    #[serde(default)]
    pub fw: FwConfig,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateConfig {
    pub instance: GeneratorSpec,
    #[serde(default)]
    pub seed: u64,
}

pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
}
