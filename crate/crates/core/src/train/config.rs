use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::nn::{AdamWConfig, LrSchedule};

/// Optimization and augmentation settings for one run.
///
/// The variant, label smoothing, view positions and contrastive weight are
/// architecture-level and live in `model`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub warmup_steps: u64,
    pub weight_decay: f64,
    pub p_view: f64,
    pub p_lang: f64,
    pub seed: u64,
    /// Views per object after even subsampling.
    pub views: usize,
    /// Candidates per instance; extra distractors are drawn from the split's object pool.
    pub distractors: usize,
    pub deterministic: bool,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 75,
            batch_size: 64,
            base_lr: 1e-3,
            warmup_steps: 10_000,
            weight_decay: 0.01,
            p_view: 0.1,
            p_lang: 0.2,
            seed: 0,
            views: 8,
            distractors: 2,
            deterministic: false,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if self.views == 0 || self.views > self.model.max_views {
            return Err(Error::Config(format!("views must be in 1..={}, got {}", self.model.max_views, self.views)));
        }
        if self.distractors < 2 {
            return Err(Error::Config(format!("need at least 2 candidates, got {}", self.distractors)));
        }
        for (name, p) in [("p_view", self.p_view), ("p_lang", self.p_lang)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name}={p} outside [0,1]")));
            }
        }
        if !(self.base_lr >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("learning rate and weight decay must be non-negative".into()));
        }
        Ok(())
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule { base_lr: self.base_lr, warmup_steps: self.warmup_steps }
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig { weight_decay: self.weight_decay, ..AdamWConfig::default() }
    }
}
