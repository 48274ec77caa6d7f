//! The noise-prediction network.
//!
//! A residual MLP over the latent. Every block runs a time-conditioned MLP
//! and then multi-head cross-attention whose queries come from the hidden
//! state and whose keys and values come from the conditioning set. The
//! conditioning set carries no positions, so the output does not depend on
//! its order.
//!
//! Parameter names:
//!
//! | name | shape |
//! |------|-------|
//! | `input.weight`, `input.bias` | `[L, H]`, `[H]` |
//! | `time.weight`, `time.bias` | `[T, H]`, `[H]` |
//! | `blocks.{i}.norm1.{gain,bias}` | `[H]` |
//! | `blocks.{i}.mlp.fc1.{weight,bias}` | `[H, H]`, `[H]` |
//! | `blocks.{i}.mlp.time.weight` | `[H, H]` |
//! | `blocks.{i}.mlp.fc2.{weight,bias}` | `[H, H]`, `[H]` |
//! | `blocks.{i}.norm2.{gain,bias}` | `[H]` |
//! | `blocks.{i}.attn.{q,k,v}.weight` | `[H, H]`, `[d, H]`, `[d, H]` |
//! | `blocks.{i}.attn.out.{weight,bias}` | `[H, H]`, `[H]` |
//! | `output.norm.{gain,bias}` | `[H]` |
//! | `output.weight`, `output.bias` | `[H, L]`, `[L]` |

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::{Binding, CondBatch, NoisePredictor};
use crate::error::{RdmError, Result};
use crate::numerics::{BoundParams, Graph, ParamStore, Tensor, Var};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiserConfig {
    pub latent_dim: usize,
    pub hidden: usize,
    pub blocks: usize,
    pub heads: usize,
    pub cond_dim: usize,
    pub time_dim: usize,
    pub seed: u64,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            latent_dim: 32,
            hidden: 128,
            blocks: 4,
            heads: 4,
            cond_dim: 64,
            time_dim: 32,
            seed: 0,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        let c = self;
        if c.latent_dim == 0 || c.hidden == 0 || c.heads == 0 || c.cond_dim == 0 || c.time_dim == 0 {
            return Err(RdmError::contract("denoiser dims must be positive"));
        }
        if c.hidden % c.heads != 0 {
            return Err(RdmError::contract(format!(
                "hidden width {} not divisible by {} heads",
                c.hidden, c.heads
            )));
        }
        if c.time_dim % 2 != 0 {
            return Err(RdmError::contract("time_dim must be even"));
        }
        Ok(())
    }

    /// Every parameter name with its shape, in initialization order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let (l, h, d, td) = (self.latent_dim, self.hidden, self.cond_dim, self.time_dim);
        let mut out = vec![
            ("input.weight".to_string(), vec![l, h]),
            ("input.bias".to_string(), vec![h]),
            ("time.weight".to_string(), vec![td, h]),
            ("time.bias".to_string(), vec![h]),
        ];
        for i in 0..self.blocks {
            let p = |s: &str| format!("blocks.{i}.{s}");
            out.extend([
                (p("norm1.gain"), vec![h]),
                (p("norm1.bias"), vec![h]),
                (p("mlp.fc1.weight"), vec![h, h]),
                (p("mlp.fc1.bias"), vec![h]),
                (p("mlp.time.weight"), vec![h, h]),
                (p("mlp.fc2.weight"), vec![h, h]),
                (p("mlp.fc2.bias"), vec![h]),
                (p("norm2.gain"), vec![h]),
                (p("norm2.bias"), vec![h]),
                (p("attn.q.weight"), vec![h, h]),
                (p("attn.k.weight"), vec![d, h]),
                (p("attn.v.weight"), vec![d, h]),
                (p("attn.out.weight"), vec![h, h]),
                (p("attn.out.bias"), vec![h]),
            ]);
        }
        out.extend([
            ("output.norm.gain".to_string(), vec![h]),
            ("output.norm.bias".to_string(), vec![h]),
            ("output.weight".to_string(), vec![h, l]),
            ("output.bias".to_string(), vec![l]),
        ]);
        out
    }
}

/// Seeded initialization: weights `N(0, 1/fan_in)`, biases zero, norm gains
/// one, output layer zero.
pub fn init_params(config: &DenoiserConfig) -> Result<ParamStore> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut store = ParamStore::new();
    for (name, shape) in config.param_shapes() {
        let t = if name.starts_with("output.weight") || name.ends_with("bias") {
            Tensor::zeros(&shape)
        } else if name.ends_with("gain") {
            Tensor::ones(&shape)
        } else {
            Tensor::randn(&shape, 1.0 / (shape[0] as f64).sqrt(), &mut rng)
        };
        store.insert(name, t)?;
    }
    Ok(store)
}

/// Sinusoidal features `[sin(tω_0), cos(tω_0), sin(tω_1), …]` with
/// `ω_i = 10000^(−i/(dim/2))`.
pub fn time_embedding(t: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for i in 0..half {
        let w = 10000f64.powf(-(i as f64) / half as f64);
        out.push((t * w).sin());
        out.push((t * w).cos());
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    config: DenoiserConfig,
    params: ParamStore,
}

impl Denoiser {
    pub fn new(config: DenoiserConfig) -> Result<Self> {
        Ok(Self {
            params: init_params(&config)?,
            config,
        })
    }

    /// Checks that `params` holds exactly the parameters of `config`.
    pub fn from_params(config: DenoiserConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let shapes = config.param_shapes();
        if shapes.len() != params.len() {
            return Err(RdmError::Config(format!(
                "config expects {} parameters, store has {}",
                shapes.len(),
                params.len()
            )));
        }
        for (name, shape) in &shapes {
            match params.get(name) {
                Some(t) if t.shape() == shape.as_slice() => {}
                Some(t) => {
                    return Err(RdmError::Config(format!(
                        "parameter {name} has shape {:?}, config expects {shape:?}",
                        t.shape()
                    )))
                }
                None => return Err(RdmError::Config(format!("missing parameter {name}"))),
            }
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore {
        self.params
    }

    /// ε̂ for a `[B, L]` latent batch with frozen weights, evaluated in row
    /// chunks so the attention mask stays small.
    pub fn predict_noise(&self, z_t: &Tensor, t: &[usize], cond: &CondBatch) -> Result<Tensor> {
        const CHUNK: usize = 64;
        let (b, l) = z_t.dims2();
        if t.len() != b || cond.batch() != b {
            return Err(RdmError::contract(format!(
                "{b} latents, {} timesteps, {} conditioning sets",
                t.len(),
                cond.batch()
            )));
        }
        let mut out = Vec::with_capacity(b * l);
        for start in (0..b).step_by(CHUNK) {
            let end = (start + CHUNK).min(b);
            let mut g = Graph::new();
            let rows = Tensor::new(vec![end - start, l], z_t.data()[start * l..end * l].to_vec())?;
            let z = g.constant(rows);
            let eps = self.predict(&mut g, z, &t[start..end], &cond.slice(start..end)?, Binding::Frozen)?;
            if let Some(op) = g.failure() {
                return Err(RdmError::Numeric { op: op.into() });
            }
            out.extend_from_slice(g.value(eps).data());
        }
        Tensor::new(vec![b, l], out)
    }

    fn norm(g: &mut Graph, p: &BoundParams, x: Var, prefix: &str) -> Result<Var> {
        let n = g.layer_norm(x, LN_EPS);
        let n = g.mul(n, p.get(&format!("{prefix}.gain"))?)?;
        g.add(n, p.get(&format!("{prefix}.bias"))?)
    }

    fn forward(&self, g: &mut Graph, p: &BoundParams, z_t: Var, t: &[usize], cond: &CondBatch) -> Result<Var> {
        let c = &self.config;
        let (b, l) = {
            let s = g.value(z_t).shape();
            (s[0], s.get(1).copied().unwrap_or(0))
        };
        if g.value(z_t).rank() != 2 || l != c.latent_dim || t.len() != b || cond.batch() != b {
            return Err(RdmError::contract(format!(
                "denoiser expects [B, {}] with B timesteps and sets; got {:?}, {} timesteps, {} sets",
                c.latent_dim,
                g.value(z_t).shape(),
                t.len(),
                cond.batch()
            )));
        }
        if cond.dim() != c.cond_dim {
            return Err(RdmError::contract(format!(
                "conditioning dim {} != {}",
                cond.dim(),
                c.cond_dim
            )));
        }
        let te: Vec<f64> = t
            .iter()
            .flat_map(|&ti| time_embedding(ti as f64, c.time_dim))
            .collect();
        let te = g.constant(Tensor::new(vec![b, c.time_dim], te)?);
        let temb = g.linear(te, p.get("time.weight")?, Some(p.get("time.bias")?))?;
        let temb = g.silu(temb);
        let mut h = g.linear(z_t, p.get("input.weight")?, Some(p.get("input.bias")?))?;
        h = g.add(h, temb)?;

        let keys = g.constant(cond.keys.clone());
        let mask = g.constant(cond.mask());
        let head_dim = c.hidden / c.heads;
        for i in 0..c.blocks {
            let name = |s: &str| format!("blocks.{i}.{s}");
            let a = Self::norm(g, p, h, &name("norm1"))?;
            let m = g.linear(a, p.get(&name("mlp.fc1.weight"))?, Some(p.get(&name("mlp.fc1.bias"))?))?;
            let tm = g.matmul(temb, p.get(&name("mlp.time.weight"))?)?;
            let m = g.add(m, tm)?;
            let m = g.silu(m);
            let m = g.linear(m, p.get(&name("mlp.fc2.weight"))?, Some(p.get(&name("mlp.fc2.bias"))?))?;
            h = g.add(h, m)?;

            let a = Self::norm(g, p, h, &name("norm2"))?;
            let q = g.matmul(a, p.get(&name("attn.q.weight"))?)?;
            let k = g.matmul(keys, p.get(&name("attn.k.weight"))?)?;
            let v = g.matmul(keys, p.get(&name("attn.v.weight"))?)?;
            let heads = (0..c.heads)
                .map(|j| {
                    let qj = g.slice(q, 1, j * head_dim, head_dim)?;
                    let kj = g.slice(k, 1, j * head_dim, head_dim)?;
                    let vj = g.slice(v, 1, j * head_dim, head_dim)?;
                    g.attention(qj, kj, vj, Some(mask))
                })
                .collect::<Result<Vec<_>>>()?;
            let att = if heads.len() == 1 { heads[0] } else { g.concat(&heads, 1)? };
            let att = g.linear(att, p.get(&name("attn.out.weight"))?, Some(p.get(&name("attn.out.bias"))?))?;
            h = g.add(h, att)?;
        }
        let out = Self::norm(g, p, h, "output.norm")?;
        let out = g.silu(out);
        g.linear(out, p.get("output.weight")?, Some(p.get("output.bias")?))
    }
}

impl NoisePredictor for Denoiser {
    fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    fn predict(&self, g: &mut Graph, z_t: Var, t: &[usize], cond: &CondBatch, binding: Binding) -> Result<Var> {
        let p = match binding {
            Binding::Trainable => self.params.bind(g),
            Binding::Frozen => self.params.bind_frozen(g),
        };
        self.forward(g, &p, z_t, t, cond)
    }
}
