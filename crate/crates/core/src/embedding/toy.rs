use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Embedder, Embedding, Query};
use crate::error::{RdmError, Result};
use crate::numerics::Tensor;

/// Geometry of the synthetic world.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToySpaceConfig {
    /// Embedding width `d`.
    pub embed_dim: usize,
    pub content_dim: usize,
    pub n_styles: usize,
    /// Weight `w_s` of the style one-hot relative to content.
    pub style_weight: f64,
    /// Observation ("image") width `p`.
    pub obs_dim: usize,
    /// Magnitude of the style signal inside an observation.
    pub style_amplitude: f64,
    /// Std-dev of the per-item texture in the unused observation directions.
    pub texture_noise: f64,
    /// Seeds the observation basis.
    pub seed: u64,
}

impl Default for ToySpaceConfig {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            content_dim: 8,
            n_styles: 4,
            style_weight: 1.0,
            obs_dim: 32,
            style_amplitude: 1.0,
            texture_noise: 0.05,
            seed: 0,
        }
    }
}

/// A synthetic datum with known content and style.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyItem {
    pub id: String,
    pub content: Vec<f64>,
    pub style: usize,
    pub observation: Vec<f64>,
}

impl ToyItem {
    /// Opaque database payload: content (f32), style (u32), observation (f32).
    pub fn to_payload(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 4 * (self.content.len() + self.observation.len()));
        out.extend_from_slice(&(self.content.len() as u32).to_le_bytes());
        for &v in &self.content {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out.extend_from_slice(&(self.style as u32).to_le_bytes());
        out.extend_from_slice(&(self.observation.len() as u32).to_le_bytes());
        for &v in &self.observation {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_payload(id: &str, bytes: &[u8]) -> Result<Self> {
        let bad = || RdmError::Format {
            file: format!("payload of {id}"),
            offset: 0,
            reason: "malformed toy item payload".into(),
        };
        let mut pos = 0;
        let u32_at = |pos: &mut usize| -> Result<u32> {
            let b = bytes.get(*pos..*pos + 4).ok_or_else(bad)?;
            *pos += 4;
            Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        };
        let n_content = u32_at(&mut pos)? as usize;
        let mut content = Vec::with_capacity(n_content);
        for _ in 0..n_content {
            content.push(f32::from_bits(u32_at(&mut pos)?) as f64);
        }
        let style = u32_at(&mut pos)? as usize;
        let n_obs = u32_at(&mut pos)? as usize;
        let mut observation = Vec::with_capacity(n_obs);
        for _ in 0..n_obs {
            observation.push(f32::from_bits(u32_at(&mut pos)?) as f64);
        }
        if pos != bytes.len() {
            return Err(bad());
        }
        Ok(Self {
            id: id.to_string(),
            content,
            style,
            observation,
        })
    }
}

/// Analytic joint embedder for the synthetic world.
///
/// An observation is `B·u` for a fixed random orthogonal basis `B`, where
/// `u = [content, a·onehot(style), texture]`. Items and queries embed as
/// `normalize([content, w_s·onehot(style), 0…])`; an observation embeds by
/// undoing `B` and reading the same two blocks back, so a clean item's
/// observation lands on the item's embedding.
#[derive(Clone, Debug)]
pub struct ToySpace {
    config: ToySpaceConfig,
    /// `obs_dim × obs_dim`, row-major; columns are the basis vectors.
    basis: Vec<f64>,
}

impl ToySpace {
    pub fn new(config: ToySpaceConfig) -> Result<Self> {
        let c = &config;
        if c.content_dim == 0 || c.n_styles == 0 {
            return Err(RdmError::contract("content_dim and n_styles must be positive"));
        }
        if c.content_dim + c.n_styles > c.embed_dim || c.content_dim + c.n_styles > c.obs_dim {
            return Err(RdmError::contract(format!(
                "content_dim + n_styles ({}) exceeds embed_dim {} or obs_dim {}",
                c.content_dim + c.n_styles,
                c.embed_dim,
                c.obs_dim
            )));
        }
        if !(c.style_weight >= 0.0 && c.style_amplitude > 0.0 && c.texture_noise >= 0.0) {
            return Err(RdmError::contract("style/texture scales must be non-negative"));
        }
        let basis = random_orthogonal(c.obs_dim, c.seed);
        Ok(Self { config, basis })
    }

    pub fn config(&self) -> &ToySpaceConfig {
        &self.config
    }

    pub fn n_styles(&self) -> usize {
        self.config.n_styles
    }

    fn check_style(&self, style: usize) -> Result<()> {
        if style >= self.config.n_styles {
            return Err(RdmError::contract(format!(
                "style {style} out of range 0..{}",
                self.config.n_styles
            )));
        }
        Ok(())
    }

    fn check_content(&self, content: &[f64]) -> Result<()> {
        if content.len() != self.config.content_dim {
            return Err(RdmError::contract(format!(
                "content has {} dims, expected {}",
                content.len(),
                self.config.content_dim
            )));
        }
        Ok(())
    }

    /// Deterministic observation for `(content, style)`; `item_seed` drives
    /// the texture.
    pub fn observation(&self, content: &[f64], style: usize, item_seed: u64) -> Result<Vec<f64>> {
        self.check_content(content)?;
        self.check_style(style)?;
        let c = &self.config;
        let mut u = vec![0.0; c.obs_dim];
        u[..c.content_dim].copy_from_slice(content);
        u[c.content_dim + style] = c.style_amplitude;
        let tex_start = c.content_dim + c.n_styles;
        if tex_start < c.obs_dim && c.texture_noise > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(item_seed);
            let tex = Tensor::randn(&[c.obs_dim - tex_start], c.texture_noise, &mut rng);
            u[tex_start..].copy_from_slice(tex.data());
        }
        let p = c.obs_dim;
        Ok((0..p)
            .map(|i| (0..p).map(|j| self.basis[i * p + j] * u[j]).sum())
            .collect())
    }

    pub fn make_item(
        &self,
        id: impl Into<String>,
        content: Vec<f64>,
        style: usize,
        item_seed: u64,
    ) -> Result<ToyItem> {
        let observation = self.observation(&content, style, item_seed)?;
        Ok(ToyItem {
            id: id.into(),
            content,
            style,
            observation,
        })
    }

    fn assemble(&self, content: Option<&[f64]>, style_features: Option<&[f64]>) -> Result<Embedding> {
        let c = &self.config;
        let mut v = vec![0.0; c.embed_dim];
        if let Some(content) = content {
            v[..c.content_dim].copy_from_slice(content);
        }
        if let Some(s) = style_features {
            for (k, &x) in s.iter().enumerate() {
                v[c.content_dim + k] = c.style_weight * x;
            }
        }
        Embedding::normalize(&v)
    }

    fn onehot(&self, style: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.config.n_styles];
        v[style] = 1.0;
        v
    }

    /// `normalize([content, w_s·onehot(style), 0…])`.
    pub fn embed_item(&self, item: &ToyItem) -> Result<Embedding> {
        self.check_content(&item.content)?;
        self.check_style(item.style)?;
        self.assemble(Some(&item.content), Some(&self.onehot(item.style)))
    }

    /// Content and per-style scores recovered from an observation.
    pub fn decompose(&self, observation: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let c = &self.config;
        if observation.len() != c.obs_dim {
            return Err(RdmError::contract(format!(
                "observation has {} dims, expected {}",
                observation.len(),
                c.obs_dim
            )));
        }
        let p = c.obs_dim;
        let u: Vec<f64> = (0..c.content_dim + c.n_styles)
            .map(|j| (0..p).map(|i| self.basis[i * p + j] * observation[i]).sum())
            .collect();
        let content = u[..c.content_dim].to_vec();
        let style = u[c.content_dim..]
            .iter()
            .map(|x| x / c.style_amplitude)
            .collect();
        Ok((content, style))
    }
}

impl Embedder for ToySpace {
    fn dim(&self) -> usize {
        self.config.embed_dim
    }

    /// Same construction as [`ToySpace::embed_item`], absent parts zeroed.
    fn embed_query(&self, query: &Query) -> Result<Embedding> {
        if query.content.is_none() && query.style.is_none() {
            return Err(RdmError::contract("empty query"));
        }
        if let Some(c) = &query.content {
            self.check_content(c)?;
        }
        let style = match query.style {
            Some(s) => {
                self.check_style(s)?;
                Some(self.onehot(s))
            }
            None => None,
        };
        self.assemble(query.content.as_deref(), style.as_deref())
    }

    fn embed_observation(&self, observation: &[f64]) -> Result<Embedding> {
        let (content, style) = self.decompose(observation)?;
        self.assemble(Some(&content), Some(&style))
    }
}

/// Orthogonal matrix from Gram-Schmidt on a seeded Gaussian matrix.
fn random_orthogonal(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6f72_7468_6f67);
    loop {
        let g = Tensor::randn(&[n, n], 1.0, &mut rng).into_data();
        // columns as vectors
        let mut cols: Vec<Vec<f64>> = (0..n).map(|j| (0..n).map(|i| g[i * n + j]).collect()).collect();
        let mut ok = true;
        for j in 0..n {
            for k in 0..j {
                let d: f64 = cols[j].iter().zip(&cols[k]).map(|(a, b)| a * b).sum();
                let prev = cols[k].clone();
                for (x, p) in cols[j].iter_mut().zip(&prev) {
                    *x -= d * p;
                }
            }
            let norm = cols[j].iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-8 {
                ok = false;
                break;
            }
            cols[j].iter_mut().for_each(|x| *x /= norm);
        }
        if ok {
            let mut out = vec![0.0; n * n];
            for (j, col) in cols.iter().enumerate() {
                for i in 0..n {
                    out[i * n + j] = col[i];
                }
            }
            return out;
        }
    }
}
