use alloc::format;

use serde::{Deserialize, Serialize};

use crate::analysis::LSR_THRESHOLD_CLASSIFICATION;
use crate::error::{Error, Result};

/// How teacher non-salient layers are matched to student layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MappingMode {
    /// Cosine per channel, summed over channels.
    Channel,
    /// Cosine per token vector, summed over tokens and batch.
    Token,
    /// Single cosine of the fully flattened maps.
    Both,
    /// Uniformly random student layer per teacher layer.
    Random,
    /// No mapping and no teacher update (plain distillation).
    None,
}

impl MappingMode {
    pub fn uses_similarity(self) -> bool {
        matches!(self, MappingMode::Channel | MappingMode::Token | MappingMode::Both)
    }
}

impl core::str::FromStr for MappingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "channel" => Ok(MappingMode::Channel),
            "token" => Ok(MappingMode::Token),
            "both" => Ok(MappingMode::Both),
            "random" => Ok(MappingMode::Random),
            "none" => Ok(MappingMode::None),
            other => Err(Error::InvalidConfig(format!("unknown mapping mode {other:?}"))),
        }
    }
}

/// Source of the accuracy used for layer saliency during training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LsrMode {
    /// Labeled target-eval split.
    Oracle,
    /// Agreement with the teacher's own confident pseudo-labels on
    /// unlabeled target data.
    Proxy,
}

impl core::str::FromStr for LsrMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(LsrMode::Oracle),
            "proxy" => Ok(LsrMode::Proxy),
            other => Err(Error::InvalidConfig(format!("unknown lsr mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CldaConfig {
    pub total_steps: usize,
    /// First step of the mapping window.
    pub stage2_start: usize,
    /// Last step of the mapping window; teacher updates run after it.
    pub stage3_start: usize,
    pub ema_alpha: f64,
    pub confidence_threshold: f64,
    pub lsr_threshold: f64,
    pub selection_fraction: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub mapping: MappingMode,
    pub lsr_mode: LsrMode,
    pub eval_every: usize,
}

impl Default for CldaConfig {
    fn default() -> Self {
        Self {
            total_steps: 3000,
            stage2_start: 1000,
            stage3_start: 1500,
            ema_alpha: 0.999,
            confidence_threshold: 0.968,
            lsr_threshold: LSR_THRESHOLD_CLASSIFICATION,
            selection_fraction: 0.3,
            learning_rate: 3e-3,
            batch_size: 32,
            seed: 0,
            mapping: MappingMode::Channel,
            lsr_mode: LsrMode::Oracle,
            eval_every: 100,
        }
    }
}

impl CldaConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg| Err(Error::InvalidConfig(msg));
        if !(self.stage2_start <= self.stage3_start && self.stage3_start <= self.total_steps) {
            return bad(format!(
                "need 0 <= T2 <= T3 <= T, got T2={} T3={} T={}",
                self.stage2_start, self.stage3_start, self.total_steps
            ));
        }
        if !(0.0..=1.0).contains(&self.ema_alpha) {
            return bad(format!("ema_alpha {} outside [0, 1]", self.ema_alpha));
        }
        if !(self.confidence_threshold > 0.0 && self.confidence_threshold <= 1.0) {
            return bad(format!("confidence_threshold {} outside (0, 1]", self.confidence_threshold));
        }
        if !(self.selection_fraction > 0.0 && self.selection_fraction <= 1.0) {
            return bad(format!("selection_fraction {} outside (0, 1]", self.selection_fraction));
        }
        if !(self.lsr_threshold >= 0.0) {
            return bad(format!("lsr_threshold {} must be non-negative", self.lsr_threshold));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} invalid", self.learning_rate));
        }
        if self.batch_size == 0 || self.eval_every == 0 {
            return bad("batch_size and eval_every must be positive".into());
        }
        Ok(())
    }
}

/// Baseline trainer (source supervision, optionally plus target
/// self-training).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    pub total_steps: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub confidence_threshold: f64,
    pub self_training: bool,
    pub eval_every: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            total_steps: 1500,
            learning_rate: 3e-3,
            batch_size: 32,
            seed: 0,
            confidence_threshold: 0.968,
            self_training: true,
            eval_every: 100,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::InvalidConfig("batch_size and eval_every must be positive".into()));
        }
        if !(self.confidence_threshold > 0.0 && self.confidence_threshold <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "confidence_threshold {} outside (0, 1]",
                self.confidence_threshold
            )));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!("learning_rate {} invalid", self.learning_rate)));
        }
        Ok(())
    }
}
