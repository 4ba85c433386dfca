use std::path::Path;

use hybrid_core::dataset::{CorpusConfig, Excitation};
use hybrid_core::models::{ModelConfig, ModelKind};
use hybrid_core::train::{GradCheckConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub kind: Option<ModelKind>,
    /// Defaults to the benchmark size for the kind (27 for CTRNN, else 16).
    pub hidden: Option<usize>,
    pub field_hidden: Vec<usize>,
    pub readout_hidden: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let base = ModelConfig::new(ModelKind::NodeRnn);
        Self {
            kind: None,
            hidden: None,
            field_hidden: base.field_hidden,
            readout_hidden: base.readout_hidden,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    /// RK4 substeps per observation interval.
    pub substeps: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self { substeps: ModelConfig::new(ModelKind::NodeRnn).substeps }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExportSection {
    pub amplitude: f64,
    pub frequency: f64,
    /// Interpreter step as a fraction of the excitation period.
    pub steps_per_period: usize,
    /// Fixed step; overrides `steps_per_period` when set.
    pub timestep: Option<f64>,
    /// Round-trip NRMSE above this fails verification.
    pub ceiling: f64,
}

impl Default for ExportSection {
    fn default() -> Self {
        Self { amplitude: 1.5, frequency: 0.5, steps_per_period: 512, timestep: None, ceiling: 1e-2 }
    }
}

impl ExportSection {
    pub fn excitation(&self) -> Excitation {
        Excitation { amplitude: self.amplitude, frequency: self.frequency }
    }

    pub fn resolved_timestep(&self) -> f64 {
        self.timestep
            .unwrap_or(1.0 / (self.frequency * self.steps_per_period as f64))
    }

    fn validate(&self) -> CliResult<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.amplitude) || !positive(self.frequency) || !positive(self.ceiling) {
            return Err(CliError::Config("export amplitude, frequency and ceiling must be positive".into()));
        }
        if self.steps_per_period == 0 || self.timestep.is_some_and(|t| !positive(t)) {
            return Err(CliError::Config("export timestep must be positive".into()));
        }
        Ok(())
    }
}

/// Everything a command needs, from a JSON file plus flag overrides.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Applied to the corpus split, parameter init, shuffling and gradcheck.
    pub seed: Option<u64>,
    pub corpus: CorpusConfig,
    pub model: ModelSection,
    pub training: TrainConfig,
    pub solver: SolverSection,
    pub export: ExportSection,
    pub gradcheck: GradCheckConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Push the top-level seed into every section that takes one.
    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
        self.corpus.seed = seed;
        self.training.seed = seed;
        self.gradcheck.seed = seed;
    }

    pub fn model_config(&self) -> CliResult<ModelConfig> {
        let kind = self
            .model
            .kind
            .ok_or_else(|| CliError::Usage("no model kind given (use --kind or model.kind)".into()))?;
        let c = ModelConfig {
            hidden: self.model.hidden.unwrap_or(kind.default_hidden()),
            field_hidden: self.model.field_hidden.clone(),
            readout_hidden: self.model.readout_hidden,
            substeps: self.solver.substeps,
            ..ModelConfig::new(kind)
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.corpus.validate()?;
        self.training.validate()?;
        self.gradcheck.validate()?;
        self.export.validate()?;
        if self.solver.substeps == 0 {
            return Err(CliError::Config("solver substeps must be at least 1".into()));
        }
        if let Some(seed) = self.seed {
            let sections = [self.corpus.seed, self.training.seed, self.gradcheck.seed];
            if sections.iter().any(|&s| s != seed) {
                return Err(CliError::Config("section seeds disagree with the top-level seed".into()));
            }
        }
        if self.model.kind.is_some() {
            self.model_config()?;
        }
        Ok(())
    }
}
