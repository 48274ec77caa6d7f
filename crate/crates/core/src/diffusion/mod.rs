//! Denoising diffusion core: noise schedule, forward corruption, the
//! retrieval-conditioned noise-prediction loss and the ancestral sampler.

mod codec;
mod conditioning;
mod samples;
mod schedule;

pub use codec::{IdentityCodec, LatentCodec};
pub use conditioning::{CondBatch, ConditioningSet};
pub use samples::{decode_samples, encode_samples, load_samples, save_samples, SAMPLES_MAGIC};
pub use schedule::{make_schedule, NoiseSchedule, ScheduleConfig};

use rand::Rng;

use crate::error::{RdmError, Result};
use crate::numerics::{Graph, Tensor, Var};

/// How a predictor exposes its weights to the graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Binding {
    /// Weights are parameters and receive gradients.
    Trainable,
    /// Weights are constants.
    Frozen,
}

/// A network ε(z_t, t, C) predicting the noise in `z_t`.
pub trait NoisePredictor: Sync {
    fn latent_dim(&self) -> usize;

    /// `z_t` is `[B, latent_dim]`, `t` holds one timestep per row and `cond`
    /// one conditioning set per row. Returns a `[B, latent_dim]` variable.
    fn predict(
        &self,
        g: &mut Graph,
        z_t: Var,
        t: &[usize],
        cond: &CondBatch,
        binding: Binding,
    ) -> Result<Var>;
}

/// `z_t = √ᾱ_t·z0 + √(1−ᾱ_t)·eps`.
pub fn forward_diffuse(z0: &Tensor, t: usize, eps: &Tensor, schedule: &NoiseSchedule) -> Result<Tensor> {
    if z0.shape() != eps.shape() {
        return Err(RdmError::contract(format!(
            "eps shape {:?} != z0 shape {:?}",
            eps.shape(),
            z0.shape()
        )));
    }
    let (a, b) = schedule.marginal(t)?;
    let data = z0.data().iter().zip(eps.data()).map(|(z, e)| a * z + b * e).collect();
    Tensor::new(z0.shape().to_vec(), data)
}

/// Row-wise [`forward_diffuse`] with one timestep per row of `[B, L]`.
pub fn forward_diffuse_batch(
    z0: &Tensor,
    t: &[usize],
    eps: &Tensor,
    schedule: &NoiseSchedule,
) -> Result<Tensor> {
    let (rows, cols) = z0.dims2();
    if z0.shape() != eps.shape() || t.len() != rows {
        return Err(RdmError::contract(format!(
            "batch mismatch: z0 {:?}, eps {:?}, {} timesteps",
            z0.shape(),
            eps.shape(),
            t.len()
        )));
    }
    let mut data = Vec::with_capacity(rows * cols);
    for (r, &tr) in t.iter().enumerate() {
        let (a, b) = schedule.marginal(tr)?;
        data.extend(
            z0.row_slice(r)
                .iter()
                .zip(eps.row_slice(r))
                .map(|(z, e)| a * z + b * e),
        );
    }
    Tensor::new(z0.shape().to_vec(), data)
}

/// Mean squared error between `eps` and the prediction at
/// `(forward_diffuse(encode(x), t, eps), t, cond)`.
#[allow(clippy::too_many_arguments)]
pub fn rdm_loss<P: NoisePredictor + ?Sized>(
    g: &mut Graph,
    predictor: &P,
    codec: &dyn LatentCodec,
    x: &Tensor,
    cond: &CondBatch,
    t: &[usize],
    eps: &Tensor,
    schedule: &NoiseSchedule,
) -> Result<Var> {
    let z0 = codec.encode(x)?;
    if z0.dims2().1 != predictor.latent_dim() || cond.batch() != t.len() {
        return Err(RdmError::contract(format!(
            "latent dim {} vs predictor {}, {} conditioning sets for {} rows",
            z0.dims2().1,
            predictor.latent_dim(),
            cond.batch(),
            t.len()
        )));
    }
    let z_t = forward_diffuse_batch(&z0, t, eps, schedule)?;
    let z_t = g.constant(z_t);
    let target = g.constant(eps.clone());
    let pred = predictor.predict(g, z_t, t, cond, Binding::Trainable)?;
    let diff = g.sub(target, pred)?;
    let sq = g.mul(diff, diff)?;
    Ok(g.mean(sq))
}

/// Ancestral sampling from `z_T ~ N(0, I)` down to `z_0`, one sample per
/// conditioning set in `cond`.
///
/// Each step uses `z_{t-1} = (z_t − β_t/√(1−ᾱ_t)·ε̂)/√α_t + √β_t·n` with
/// `n ~ N(0, I)` and no noise on the final step.
pub fn sample_ancestral<P: NoisePredictor + ?Sized, R: Rng + ?Sized>(
    predictor: &P,
    cond: &CondBatch,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<Tensor> {
    let b = cond.batch();
    let l = predictor.latent_dim();
    let mut z = Tensor::randn(&[b, l], 1.0, rng).into_data();
    for t in (1..=schedule.timesteps()).rev() {
        let mut g = Graph::new();
        let zv = g.constant(Tensor::new(vec![b, l], z.clone()).map_err(|_| RdmError::SamplingDiverged { timestep: t })?);
        let eps_hat = predictor.predict(&mut g, zv, &vec![t; b], cond, Binding::Frozen);
        let eps_hat = match eps_hat {
            Ok(v) if g.failure().is_none() => g.value(v),
            Ok(_) | Err(RdmError::Numeric { .. }) => return Err(RdmError::SamplingDiverged { timestep: t }),
            Err(e) => return Err(e),
        };
        if eps_hat.shape() != [b, l] {
            return Err(RdmError::contract(format!(
                "predictor returned {:?}, expected [{b}, {l}]",
                eps_hat.shape()
            )));
        }
        let beta = schedule.beta(t);
        let coef = beta / (1.0 - schedule.alpha_bar(t)).sqrt();
        let inv_sqrt_alpha = 1.0 / schedule.alpha(t).sqrt();
        for (zi, e) in z.iter_mut().zip(eps_hat.data()) {
            *zi = (*zi - coef * e) * inv_sqrt_alpha;
        }
        if t > 1 {
            let sigma = beta.sqrt();
            let noise = Tensor::randn(&[b, l], sigma, rng);
            for (zi, n) in z.iter_mut().zip(noise.data()) {
                *zi += n;
            }
        }
        if z.iter().any(|x| !x.is_finite()) {
            return Err(RdmError::SamplingDiverged { timestep: t });
        }
    }
    Tensor::new(vec![b, l], z)
}
