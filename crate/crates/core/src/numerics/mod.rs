//! Dense tensors, reverse-mode autodiff, Adam, and the `RDMW` parameter
//! file format.

mod adam;
mod checkpoint;
pub mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{decode_params, encode_params, load_params, save_params, PARAMS_MAGIC};
pub use graph::{block_mask, Gradients, Graph, Var};
pub use params::{accumulate_grads, BoundParams, GradMap, ParamStore};
pub use tensor::Tensor;

use crate::error::Result;

/// `softmax(q kᵀ / √d) v` on plain tensors.
pub fn attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let (q, k, v) = (g.constant(q.clone()), g.constant(k.clone()), g.constant(v.clone()));
    let out = g.attention(q, k, v, None)?;
    Ok(g.value(out).clone())
}

/// The row-stochastic weight matrix `softmax(q kᵀ / √d)`.
pub fn attention_weights(q: &Tensor, k: &Tensor) -> Result<Tensor> {
    let (_, d) = q.dims2();
    let mut g = Graph::new();
    let (q, k) = (g.constant(q.clone()), g.constant(k.clone()));
    let s = g.matmul_nt(q, k)?;
    let s = g.scale(s, 1.0 / (d as f64).sqrt());
    let w = g.softmax(s);
    Ok(g.value(w).clone())
}

#[cfg(test)]
mod tests;
