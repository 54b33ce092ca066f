//! Run configuration: one JSON file drives a whole multi-seed experiment,
//! and command-line flags override individual fields.

use std::fs;
use std::path::Path;

use clda_core::analysis::LSR_THRESHOLD_CLASSIFICATION;
use clda_core::data::DomainDatasetSpec;
use clda_core::model::ModelConfig;
use clda_core::trainer::{BaselineConfig, CldaConfig};
use serde::{Deserialize, Serialize};

use crate::csv_io::DatasetMeta;
use crate::error::{CliError, Result};

/// Architecture shared by teacher and student apart from depth. Vocabulary,
/// sequence length and class count come from the dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub width: usize,
    pub mlp_width: usize,
    pub teacher_depth: usize,
    pub student_depth: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let t = ModelConfig::teacher_default();
        Self {
            width: t.width,
            mlp_width: t.mlp_width,
            teacher_depth: t.depth,
            student_depth: ModelConfig::student_default().depth,
        }
    }
}

impl ModelSection {
    pub fn model_config(&self, meta: &DatasetMeta, depth: usize) -> ModelConfig {
        ModelConfig {
            vocab: meta.vocab,
            seq_len: meta.seq_len,
            width: self.width,
            mlp_width: self.mlp_width,
            depth,
            classes: meta.classes,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    pub lsr_threshold: f64,
    /// Leading target-eval examples used by the analyses.
    pub eval_examples: usize,
    pub cka_examples: usize,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            lsr_threshold: LSR_THRESHOLD_CLASSIFICATION,
            eval_examples: 512,
            cka_examples: 256,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DomainDatasetSpec,
    pub model: ModelSection,
    pub teacher: BaselineConfig,
    pub clda: CldaConfig,
    pub analysis: AnalysisSection,
    pub seeds: Vec<u64>,
    pub jobs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: DomainDatasetSpec::default(),
            model: ModelSection::default(),
            teacher: BaselineConfig::default(),
            clda: CldaConfig::default(),
            analysis: AnalysisSection::default(),
            seeds: vec![0],
            jobs: 1,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// The file at `path`, or the defaults.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::from_file)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |e: clda_core::Error| CliError::Config(e.to_string());
        self.data.validate().map_err(cfg)?;
        self.teacher.validate().map_err(cfg)?;
        self.clda.validate().map_err(cfg)?;
        let m = &self.model;
        if m.width == 0 || m.mlp_width == 0 || m.teacher_depth == 0 || m.student_depth == 0 {
            return Err(CliError::Config("model width, mlp_width and depths must be positive".into()));
        }
        if self.seeds.is_empty() {
            return Err(CliError::Config("seed list is empty".into()));
        }
        if self.jobs == 0 {
            return Err(CliError::Config("jobs must be positive".into()));
        }
        if self.analysis.eval_examples == 0 || self.analysis.cka_examples < 2 {
            return Err(CliError::Config("analysis needs eval_examples >= 1 and cka_examples >= 2".into()));
        }
        if !(self.analysis.lsr_threshold >= 0.0) {
            return Err(CliError::Config("lsr_threshold must be non-negative".into()));
        }
        Ok(())
    }

    pub fn teacher_for(&self, seed: u64) -> BaselineConfig {
        BaselineConfig {
            seed,
            ..self.teacher.clone()
        }
    }

    pub fn clda_for(&self, seed: u64) -> CldaConfig {
        CldaConfig { seed, ..self.clda.clone() }
    }
}
