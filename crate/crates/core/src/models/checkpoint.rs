use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::NormStats;
use crate::error::{Error, Result};
use crate::params::ParamStore;

use super::config::ModelConfig;

/// A model with its parameters and the normalization it was trained under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub norm: NormStats,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn new(model: ModelConfig, norm: NormStats, params: ParamStore) -> Result<Self> {
        let c = Self { model, norm, params };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.check_params(&self.params)?;
        self.norm.validate()?;
        if !self.params.all_finite() {
            return Err(Error::InvalidInput("checkpoint parameters are not finite".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
