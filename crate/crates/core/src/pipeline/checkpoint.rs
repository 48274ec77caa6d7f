use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binio::{open_sealed_json, seal_json, sha256_hex, write_dir_atomic};
use crate::denoiser::{Denoiser, DenoiserConfig};
use crate::diffusion::{NoiseSchedule, ScheduleConfig};
use crate::error::{RdmError, Result};
use crate::numerics::{decode_params, encode_params, AdamConfig, AdamState, ParamStore};

const META: &str = "checkpoint.json";
const PARAMS: &str = "params.rdmw";
const OPTIMIZER: &str = "optimizer.rdmw";
const FORMAT: &str = "rdm-checkpoint";

/// Trained (or initial) model state: weights, schedule and optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub denoiser: Denoiser,
    pub schedule: ScheduleConfig,
    pub step: u64,
    pub optimizer: AdamState,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    format: String,
    version: u32,
    step: u64,
    denoiser: DenoiserConfig,
    schedule: ScheduleConfig,
    optimizer: AdamConfig,
    optimizer_step: u64,
    checksums: BTreeMap<String, String>,
}

fn moments_store(state: &AdamState) -> Result<ParamStore> {
    let mut out = ParamStore::new();
    for (prefix, store) in [("m", &state.m), ("v", &state.v)] {
        for (name, t) in store.iter() {
            out.insert(format!("{prefix}/{name}"), t.clone())?;
        }
    }
    Ok(out)
}

fn format_error(path: &Path, reason: impl Into<String>) -> RdmError {
    RdmError::Format {
        file: path.display().to_string(),
        offset: 0,
        reason: reason.into(),
    }
}

impl Checkpoint {
    pub fn init(denoiser: DenoiserConfig, schedule: ScheduleConfig, optimizer: AdamConfig) -> Result<Self> {
        Ok(Self {
            denoiser: Denoiser::new(denoiser)?,
            schedule,
            step: 0,
            optimizer: AdamState::new(optimizer),
        })
    }

    pub fn noise_schedule(&self) -> Result<NoiseSchedule> {
        self.schedule.build()
    }

    /// sha256 of the serialized weights.
    pub fn hash(&self) -> String {
        sha256_hex(&encode_params(self.denoiser.params()))
    }

    /// Writes `checkpoint.json`, `params.rdmw` and `optimizer.rdmw` into
    /// `dir`, replacing it atomically. Weights are stored as f32.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let params = encode_params(self.denoiser.params());
        let moments = encode_params(&moments_store(&self.optimizer)?);
        let meta = Meta {
            format: FORMAT.into(),
            version: 1,
            step: self.step,
            denoiser: *self.denoiser.config(),
            schedule: self.schedule,
            optimizer: self.optimizer.config,
            optimizer_step: self.optimizer.step,
            checksums: [
                (PARAMS.to_string(), sha256_hex(&params)),
                (OPTIMIZER.to_string(), sha256_hex(&moments)),
            ]
            .into(),
        };
        let meta = seal_json(&meta)?;
        write_dir_atomic(dir, |tmp| {
            for (name, bytes) in [(PARAMS, &params), (OPTIMIZER, &moments), (META, &meta)] {
                let path = tmp.join(name);
                std::fs::write(&path, bytes).map_err(|e| RdmError::io(&path, e))?;
            }
            Ok(())
        })
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| {
            let path = dir.join(name);
            std::fs::read(&path).map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound => format_error(&path, "missing file"),
                _ => RdmError::io(&path, e),
            })
        };
        let meta_path = dir.join(META);
        let meta: Meta = open_sealed_json(&read(META)?, &meta_path.display().to_string())?;
        if meta.format != FORMAT || meta.version != 1 {
            return Err(format_error(&meta_path, "unsupported checkpoint format"));
        }
        let checked = |name: &str| -> Result<Vec<u8>> {
            let bytes = read(name)?;
            let expected = meta
                .checksums
                .get(name)
                .ok_or_else(|| format_error(&meta_path, format!("no checksum for {name}")))?;
            let found = sha256_hex(&bytes);
            if &found != expected {
                return Err(RdmError::Checksum {
                    file: dir.join(name).display().to_string(),
                    expected: expected.clone(),
                    found,
                });
            }
            Ok(bytes)
        };
        let params_path = dir.join(PARAMS).display().to_string();
        let params = decode_params(&checked(PARAMS)?[..], &params_path)?;
        let moments_path = dir.join(OPTIMIZER).display().to_string();
        let moments = decode_params(&checked(OPTIMIZER)?[..], &moments_path)?;
        let denoiser = Denoiser::from_params(meta.denoiser, params)?;
        let mut optimizer = AdamState::new(meta.optimizer);
        optimizer.step = meta.optimizer_step;
        for (name, t) in moments.iter() {
            let (store, key) = match name.split_once('/') {
                Some(("m", key)) => (&mut optimizer.m, key),
                Some(("v", key)) => (&mut optimizer.v, key),
                _ => return Err(format_error(&dir.join(OPTIMIZER), format!("unexpected entry {name}"))),
            };
            match denoiser.params().get(key) {
                Some(p) if p.shape() == t.shape() => store.insert(key, t.clone())?,
                _ => {
                    return Err(format_error(
                        &dir.join(OPTIMIZER),
                        format!("moment {name} does not match any parameter"),
                    ))
                }
            }
        }
        meta.schedule
            .build()
            .map_err(|e| format_error(&meta_path, e.to_string()))?;
        Ok(Self {
            denoiser,
            schedule: meta.schedule,
            step: meta.step,
            optimizer,
        })
    }
}
