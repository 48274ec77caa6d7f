use std::path::Path;

use serde::{Deserialize, Serialize};

use super::RetrievalPolicy;
use crate::denoiser::DenoiserConfig;
use crate::diffusion::ScheduleConfig;
use crate::error::{RdmError, Result};
use crate::evalkit::ToyWorldSpec;
use crate::numerics::AdamConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSettings {
    /// Total optimizer steps (a resumed run continues up to this count).
    pub steps: u64,
    pub batch_size: usize,
    pub seed: u64,
    /// Write a checkpoint every this many steps (0: only at the end).
    pub checkpoint_every: u64,
    pub log_every: u64,
    /// Rows per gradient shard; shards are fixed so results do not depend
    /// on the number of threads.
    pub shard_size: usize,
    pub optimizer: AdamConfig,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            steps: 3000,
            batch_size: 32,
            seed: 0,
            checkpoint_every: 0,
            log_every: 100,
            shard_size: 8,
            optimizer: AdamConfig::default(),
        }
    }
}

/// Everything [`super::train_rdm`] needs besides the data.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainConfig {
    pub schedule: ScheduleConfig,
    pub denoiser: DenoiserConfig,
    pub retrieval: RetrievalPolicy,
    pub train: TrainSettings,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.build().map_err(|e| RdmError::Config(e.to_string()))?;
        self.denoiser.validate().map_err(|e| RdmError::Config(e.to_string()))?;
        self.retrieval.validate()?;
        let t = &self.train;
        if t.batch_size == 0 || t.shard_size == 0 {
            return Err(RdmError::Config("batch_size and shard_size must be positive".into()));
        }
        let o = &t.optimizer;
        if !(o.lr > 0.0 && (0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2) && o.eps > 0.0) {
            return Err(RdmError::Config(format!("invalid optimizer settings {o:?}")));
        }
        Ok(())
    }
}

/// The experiment file: `[schedule]`, `[denoiser]`, `[retrieval]`,
/// `[train]` and `[data]`. Missing keys take their defaults; unknown keys
/// are rejected.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub schedule: ScheduleConfig,
    pub denoiser: DenoiserConfig,
    pub retrieval: RetrievalPolicy,
    pub train: TrainSettings,
    pub data: ToyWorldSpec,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| RdmError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| RdmError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            RdmError::Config(msg) => RdmError::Config(format!("{}: {msg}", path.display())),
            e => e,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| RdmError::Config(e.to_string()))
    }

    /// sha256 of the canonical TOML rendering.
    pub fn hash(&self) -> Result<String> {
        use sha2::{Digest, Sha256};
        Ok(hex::encode(Sha256::digest(self.to_toml()?.as_bytes())))
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config().validate()?;
        self.data.validate()?;
        Ok(())
    }

    /// The training part. The denoiser's latent and conditioning dims always
    /// come from `[data]`, overriding whatever `[denoiser]` says.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            schedule: self.schedule,
            denoiser: DenoiserConfig {
                latent_dim: self.data.obs_dim,
                cond_dim: self.data.embed_dim,
                ..self.denoiser
            },
            retrieval: self.retrieval,
            train: self.train,
        }
    }
}
