use serde::{Deserialize, Serialize};

use crate::blocks::{PoolPair, ValueSource};
use crate::error::{Error, Result};
use crate::nn::{AdamConfig, PoolMode};

/// Pooling choice for one SSFC path, as written in config files.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolSetting {
    None,
    Avg,
    Max,
}

impl From<PoolSetting> for Option<PoolMode> {
    fn from(p: PoolSetting) -> Self {
        match p {
            PoolSetting::None => None,
            PoolSetting::Avg => Some(PoolMode::Avg),
            PoolSetting::Max => Some(PoolMode::Max),
        }
    }
}

/// Architecture and optimisation hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub base_channels: usize,
    pub stage_channels: Vec<usize>,
    pub stages: usize,
    pub decoder_dim: usize,
    pub decoder_layers: usize,
    pub heads: usize,
    pub image_size: usize,
    pub query_pool: PoolSetting,
    pub key_pool: PoolSetting,
    pub value_source: ValueSource,
    /// Weights of the (time-1 extraction, time-2 extraction, change) losses.
    pub loss_weights: [f64; 3],
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        ModelConfig {
            in_channels: 3,
            base_channels: 16,
            stage_channels: vec![16, 32, 64, 128],
            stages: 4,
            decoder_dim: 128,
            decoder_layers: 4,
            heads: 4,
            image_size: 64,
            query_pool: PoolSetting::Avg,
            key_pool: PoolSetting::Max,
            value_source: ValueSource::Projection,
            loss_weights: [1.0, 1.0, 1.0],
            lr: adam.lr,
            weight_decay: adam.weight_decay,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            batch_size: 8,
            epochs: 10,
            seed: 42,
        }
    }
}

impl ModelConfig {
    /// Two-stage configuration small enough for exhaustive gradient checks.
    pub fn tiny() -> Self {
        ModelConfig {
            base_channels: 8,
            stage_channels: vec![8, 16],
            stages: 2,
            decoder_dim: 32,
            decoder_layers: 2,
            image_size: 32,
            ..ModelConfig::default()
        }
    }

    pub fn pools(&self) -> PoolPair {
        PoolPair {
            query: self.query_pool.into(),
            key: self.key_pool.into(),
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    /// Factor the input side must be divisible by.
    pub fn size_divisor(&self) -> usize {
        1 << (self.stages + 1)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.in_channels == 0 || self.base_channels == 0 {
            return fail("in_channels and base_channels must be positive".into());
        }
        if self.stages == 0 || self.stage_channels.len() != self.stages {
            return fail(format!(
                "stages = {} but stage_channels lists {} entries",
                self.stages,
                self.stage_channels.len()
            ));
        }
        // Each stage splits its channels in half and runs the multi-scale
        // block (which needs multiples of 4) on one half.
        if let Some(c) = self.stage_channels.iter().find(|&&c| c == 0 || c % 8 != 0) {
            return fail(format!(
                "stage channel count {c} must be a positive multiple of 8"
            ));
        }
        if self.decoder_layers != self.stages {
            return fail(format!(
                "decoder_layers ({}) must equal stages ({}): layer i attends to stage i",
                self.decoder_layers, self.stages
            ));
        }
        if self.heads == 0 || self.decoder_dim < 2 || !self.decoder_dim.is_multiple_of(self.heads) {
            return fail(format!(
                "decoder_dim {} must be divisible by heads {}",
                self.decoder_dim, self.heads
            ));
        }
        if !self.decoder_dim.is_multiple_of(4) {
            return fail(format!(
                "decoder_dim {} must be divisible by 4 for 2-D position encodings",
                self.decoder_dim
            ));
        }
        let div = self.size_divisor();
        if self.image_size < 32 || !self.image_size.is_multiple_of(div) {
            return fail(format!(
                "image_size {} must be >= 32 and divisible by {div}",
                self.image_size
            ));
        }
        self.pools().validate()?;
        if self.batch_size == 0 || self.epochs == 0 {
            return fail("batch_size and epochs must be positive".into());
        }
        if self.loss_weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return fail(format!(
                "loss weights {:?} must be finite and non-negative",
                self.loss_weights
            ));
        }
        if self.lr.is_nan()
            || self.lr <= 0.0
            || !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
        {
            return fail("lr must be positive and betas in [0, 1)".into());
        }
        Ok(())
    }

    /// Check that an input of `h x w` satisfies the divisibility precondition.
    pub fn check_input_size(&self, h: usize, w: usize) -> Result<()> {
        let div = self.size_divisor();
        if !h.is_multiple_of(div) || !w.is_multiple_of(div) || h < div || w < div {
            return Err(Error::Shape(format!(
                "input {h}x{w} must have sides divisible by {div}"
            )));
        }
        Ok(())
    }
}
