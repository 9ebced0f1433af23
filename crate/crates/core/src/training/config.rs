use serde::{Deserialize, Serialize};

use crate::data::AugmentSpec;
use crate::kspace::{MaskSpec, NoiseSpec};
use crate::losses::LossWeights;
use crate::model::SgConfig;
use crate::{Error, Result};

/// Everything that determines a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub model: SgConfig,
    pub weights: LossWeights,
    pub mask: MaskSpec,
    /// Measurement noise added before zero-filling, train and validation alike.
    pub noise: Option<NoiseSpec>,
    pub batch_size: usize,
    pub lr: f64,
    /// Epochs between learning-rate halvings.
    pub lr_halving_epochs: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Consecutive strict validation-NMSE increases that stop training.
    pub patience: u32,
    pub max_epochs: u64,
    /// Momentum of the running normalization statistics.
    pub bn_momentum: f64,
    /// Parameter initialization seed.
    pub init_seed: u64,
    /// Shuffle / augmentation / noise stream seed.
    pub data_seed: u64,
    /// `None` trains on the raw slices.
    pub augment: Option<AugmentSpec>,
    /// Drop the enhanced structural term from the generator objective.
    pub disable_es: bool,
    /// MS-SSIM scale count; `None` picks the most that fit the image extent.
    pub ms_ssim_scales: Option<usize>,
}

impl TrainConfig {
    /// Defaults for the given architecture and mask.
    pub fn new(model: SgConfig, mask: MaskSpec) -> Self {
        Self {
            model,
            weights: LossWeights::default(),
            mask,
            noise: None,
            batch_size: 8,
            lr: 1e-4,
            lr_halving_epochs: 10,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            patience: 10,
            max_epochs: 100,
            bn_momentum: 0.9,
            init_seed: 0,
            data_seed: 0,
            augment: Some(AugmentSpec::default()),
            disable_es: false,
            ms_ssim_scales: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if (self.mask.height, self.mask.width) != (self.model.height, self.model.width) {
            return bad(format!(
                "mask is {}x{} but the model expects {}x{}",
                self.mask.height, self.mask.width, self.model.height, self.model.width
            ));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad(format!("lr {} must be positive", self.lr));
        }
        if self.lr_halving_epochs == 0 {
            return bad("lr_halving_epochs must be positive".into());
        }
        if self.patience == 0 {
            return bad("patience must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || !(self.adam_eps > 0.0) {
            return bad("Adam betas must lie in [0, 1) and eps must be positive".into());
        }
        if !(0.0..1.0).contains(&self.bn_momentum) {
            return bad("bn_momentum must lie in [0, 1)".into());
        }
        if !(self.weights.alpha >= 0.0) || !(self.weights.beta >= 0.0) {
            return bad("loss weights must be non-negative".into());
        }
        if self.ms_ssim_scales == Some(0) {
            return bad("ms_ssim_scales must be positive".into());
        }
        Ok(())
    }
}

/// `lr0 * 0.5^floor(epoch / period)`.
pub fn lr_schedule(epoch: u64, cfg: &TrainConfig) -> f64 {
    let halvings = epoch / cfg.lr_halving_epochs;
    cfg.lr * 0.5f64.powi(halvings.min(i32::MAX as u64) as i32)
}
