use serde::{Deserialize, Serialize};

use super::adam::AdamConfig;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub margin: f64,
    pub batch_size: usize,
    pub base_lr: f64,
    pub lr_decay_every: u32,
    pub lr_decay_factor: f64,
    pub epochs: u32,
    /// Defaults to the number of training icons.
    pub triplets_per_epoch: Option<usize>,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub seed: u64,
    /// Corner-crop side as a fraction of the stored image side.
    pub crop_ratio: f64,
    /// Images per eval-mode forward pass when embedding for mining.
    pub embed_batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            margin: 0.2,
            batch_size: 16,
            base_lr: 1e-4,
            lr_decay_every: 60,
            lr_decay_factor: 10.0,
            epochs: 140,
            triplets_per_epoch: None,
            adam_beta1: adam.beta1,
            adam_beta2: adam.beta2,
            adam_epsilon: adam.epsilon,
            seed: 0,
            crop_ratio: 0.9,
            embed_batch: 32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.margin > 0.0) {
            return bad(format!("margin must be > 0, got {}", self.margin));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.base_lr > 0.0) {
            return bad(format!("base_lr must be > 0, got {}", self.base_lr));
        }
        if self.lr_decay_every == 0 {
            return bad("lr_decay_every must be at least 1".into());
        }
        if !(self.lr_decay_factor > 1.0) {
            return bad(format!("lr_decay_factor must be > 1, got {}", self.lr_decay_factor));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || !(self.adam_epsilon > 0.0) {
            return bad("adam betas must be in [0,1) and epsilon > 0".into());
        }
        if !(self.crop_ratio > 0.0 && self.crop_ratio <= 1.0) {
            return bad(format!("crop_ratio must be in (0,1], got {}", self.crop_ratio));
        }
        if self.embed_batch == 0 {
            return bad("embed_batch must be at least 1".into());
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            epsilon: self.adam_epsilon,
        }
    }
}

/// `base_lr / factor^floor(epoch / decay_every)`.
pub fn lr_at(epoch: u32, config: &TrainConfig) -> f64 {
    let drops = (epoch / config.lr_decay_every) as i32;
    config.base_lr / config.lr_decay_factor.powi(drops)
}
