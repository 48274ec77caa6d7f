use crate::error::{RdmError, Result};
use crate::numerics::Tensor;

/// Maps observations `[B, obs_dim]` to latents `[B, latent_dim]` and back.
pub trait LatentCodec: Send + Sync {
    fn observation_dim(&self) -> usize;
    fn latent_dim(&self) -> usize;
    fn encode(&self, x: &Tensor) -> Result<Tensor>;
    fn decode(&self, z: &Tensor) -> Result<Tensor>;
}

/// Latents are the observations themselves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IdentityCodec {
    pub dim: usize,
}

impl IdentityCodec {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }

    fn check(&self, x: &Tensor) -> Result<Tensor> {
        if x.rank() != 2 || x.shape()[1] != self.dim {
            return Err(RdmError::contract(format!(
                "expected [B, {}], got {:?}",
                self.dim,
                x.shape()
            )));
        }
        Ok(x.clone())
    }
}

impl LatentCodec for IdentityCodec {
    fn observation_dim(&self) -> usize {
        self.dim
    }

    fn latent_dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, x: &Tensor) -> Result<Tensor> {
        self.check(x)
    }

    fn decode(&self, z: &Tensor) -> Result<Tensor> {
        self.check(z)
    }
}
