//! Run configuration: one TOML document covering generation, splitting,
//! training, and analysis options. Every field has a default; unknown
//! keys are rejected so typos cannot silently fall back to defaults.

use std::path::Path;

use persistnet::dataset::{GeneratorConfig, SplitSpec};
use persistnet::manifold::LdaOptions;
use persistnet::net::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub generator: GeneratorConfig,
    pub split: SplitSpec,
    pub train: TrainConfig,
    pub lda: LdaOptions,
    /// Embedding net shape. When absent, `[feature_dim, 256, 64]` is
    /// derived from the training data.
    pub layer_dims: Option<Vec<usize>>,
    /// Seed of the object-to-split shuffle.
    pub split_seed: u64,
    pub out_dir: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            generator: GeneratorConfig::default(),
            split: SplitSpec::default(),
            train: TrainConfig::default(),
            lda: LdaOptions::default(),
            layer_dims: None,
            split_seed: 17,
            out_dir: "out".into(),
        }
    }
}

impl RunConfig {
    /// Loads the file when given, otherwise the defaults.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", path.display())))?;
        let config: Self = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("invalid config {}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<(), CliError> {
        self.generator.validate().map_err(CliError::from)?;
        self.train.validate().map_err(CliError::from)?;
        if let Some(dims) = &self.layer_dims {
            if dims.len() < 2 || dims.iter().any(|&d| d == 0) {
                return Err(CliError::Config(format!(
                    "layer_dims needs at least two positive entries, got {dims:?}"
                )));
            }
        }
        Ok(())
    }

    /// Net shape to train: the configured one, or the default derived
    /// from the input dimension.
    pub fn layer_dims_for(&self, input_dim: usize) -> Vec<usize> {
        match &self.layer_dims {
            Some(dims) => dims.clone(),
            None => vec![input_dim, 256, 64],
        }
    }
}
