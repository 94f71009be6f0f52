use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::DataConfig;
use crate::error::{Error, Result};
use crate::network::NetworkConfig;
use crate::objectives::LossWeights;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Training crop side. Larger images are cropped; smaller ones are used whole.
    pub image_size: usize,
    pub lr: f64,
    pub lr_decay: f64,
    /// Epochs between learning-rate decays.
    pub lr_decay_every: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Supervised epochs (one epoch is one pass over the synthetic pairs).
    pub epochs: u64,
    /// Overrides `epochs` when set.
    pub steps: Option<u64>,
    pub retrain_epochs: u64,
    pub retrain_steps: Option<u64>,
    /// Synthetic batches per pseudo-labelled batch during retraining.
    pub synthetic_per_pseudo: usize,
    pub seed: u64,
    /// 0 disables intermediate checkpoints.
    pub checkpoint_every: u64,
    pub divergence_factor: f64,
    pub divergence_patience: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 4,
            image_size: 256,
            lr: 1e-4,
            lr_decay: 0.95,
            lr_decay_every: 10,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            epochs: 100,
            steps: None,
            retrain_epochs: 100,
            retrain_steps: None,
            synthetic_per_pseudo: 1,
            seed: 0,
            checkpoint_every: 0,
            divergence_factor: 10.0,
            divergence_patience: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.lr_decay, self.beta1, self.beta2, self.eps, self.divergence_factor];
        if self.batch_size == 0 || self.image_size == 0 || self.lr_decay_every == 0 {
            return Err(Error::Config("train sizes must be positive".into()));
        }
        if !(self.lr >= 0.0) || positive.iter().any(|v| !(*v > 0.0)) || self.beta1 >= 1.0 || self.beta2 >= 1.0 {
            return Err(Error::Config("train optimizer settings out of range".into()));
        }
        if self.synthetic_per_pseudo == 0 || self.divergence_patience == 0 {
            return Err(Error::Config("synthetic_per_pseudo and divergence_patience must be positive".into()));
        }
        Ok(())
    }

    /// `lr · decay^floor(epoch / every)`.
    pub fn lr_at(&self, epoch: u64) -> f64 {
        self.lr * self.lr_decay.powi((epoch / self.lr_decay_every) as i32)
    }
}

/// Everything a run needs, stored as TOML with one section per part.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub loss: LossWeights,
    pub data: DataConfig,
}

impl Config {
    /// The published training setup.
    pub fn paper() -> Self {
        Self::default()
    }

    /// Desk-scale setup: tiny network, 64×64 images, faster learning rate.
    pub fn toy() -> Self {
        Self {
            network: NetworkConfig::tiny(),
            train: TrainConfig {
                image_size: 64,
                lr: 1e-3,
                steps: Some(300),
                retrain_steps: Some(150),
                ..TrainConfig::default()
            },
            loss: LossWeights::default(),
            data: DataConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.train.validate()?;
        self.loss.validate()?;
        self.data.validate()?;
        if self.train.image_size % self.network.size_multiple() != 0 {
            return Err(Error::Config(format!(
                "train.image_size {} is not a multiple of {}",
                self.train.image_size,
                self.network.size_multiple()
            )));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical TOML form, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }
}
