//! The shared item/query embedding space.
//!
//! Items ("images") and queries ("prompts") are mapped into one unit-norm
//! space where cosine similarity drives retrieval. [`ToySpace`] is an
//! analytic embedder for the synthetic world; [`load_embedding_file`]
//! ingests precomputed embeddings from `RDMV` files.

pub(crate) mod file;
mod toy;

pub use file::{
    decode_embeddings, encode_embeddings, load_embedding_file, save_embedding_file,
    LoadedEmbeddings, EMBEDDING_MAGIC,
};
pub use toy::{ToyItem, ToySpace, ToySpaceConfig};

use serde::{Deserialize, Serialize};

use crate::error::{RdmError, Result};

/// Unit-norm vector (f32 storage, f64 arithmetic).
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding(Vec<f32>);

const NORM_TOL: f64 = 1e-6;

impl Embedding {
    /// Normalizes `v` to unit length.
    pub fn normalize(v: &[f64]) -> Result<Self> {
        if v.is_empty() || v.iter().any(|x| !x.is_finite()) {
            return Err(RdmError::contract("embedding must be non-empty and finite"));
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(RdmError::contract("cannot normalize a zero vector"));
        }
        Ok(Self(v.iter().map(|x| (x / norm) as f32).collect()))
    }

    /// Wraps a vector that is already unit-norm within 1e-6.
    pub fn from_unit(v: Vec<f32>) -> Result<Self> {
        let norm = norm_f32(&v);
        if v.iter().any(|x| !x.is_finite()) || (norm - 1.0).abs() > NORM_TOL {
            return Err(RdmError::contract(format!(
                "embedding norm {norm} is not 1 within {NORM_TOL}"
            )));
        }
        Ok(Self(v))
    }

    /// Wraps `v`, renormalizing if its norm drifts beyond 1e-6. Returns the
    /// original norm alongside.
    pub fn coerce(v: Vec<f32>) -> Result<(Self, f64)> {
        let norm = norm_f32(&v);
        if !norm.is_finite() || norm == 0.0 {
            return Err(RdmError::contract("embedding has zero or non-finite norm"));
        }
        if (norm - 1.0).abs() > NORM_TOL {
            let v64: Vec<f64> = v.iter().map(|&x| x as f64).collect();
            Ok((Self::normalize(&v64)?, norm))
        } else {
            Ok((Self(v), norm))
        }
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&x| x as f64).collect()
    }

    pub fn norm(&self) -> f64 {
        norm_f32(&self.0)
    }

    /// Cosine similarity of the stored f32 vectors, clamped to `[-1, 1]`.
    pub fn cosine(&self, other: &Embedding) -> f64 {
        (dot_f32(&self.0, &other.0) / (self.norm() * other.norm())).clamp(-1.0, 1.0)
    }
}

fn norm_f32(v: &[f32]) -> f64 {
    v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt()
}

/// f32 dot product accumulated in f64.
#[inline]
pub(crate) fn dot_f32(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] as f64 * b[i] as f64;
        acc[1] += a[i + 1] as f64 * b[i + 1] as f64;
        acc[2] += a[i + 2] as f64 * b[i + 2] as f64;
        acc[3] += a[i + 3] as f64 * b[i + 3] as f64;
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] as f64 * b[i] as f64;
    }
    s
}

/// A "prompt": a content description, a style token, or both.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub content: Option<Vec<f64>>,
    pub style: Option<usize>,
}

impl Query {
    pub fn new(content: Option<Vec<f64>>, style: Option<usize>) -> Result<Self> {
        if content.is_none() && style.is_none() {
            return Err(RdmError::contract("query needs content, a style token, or both"));
        }
        Ok(Self { content, style })
    }

    pub fn content(content: Vec<f64>) -> Self {
        Self {
            content: Some(content),
            style: None,
        }
    }

    pub fn style(style: usize) -> Self {
        Self {
            content: None,
            style: Some(style),
        }
    }

    /// The same query with a style token appended.
    pub fn with_style(mut self, style: usize) -> Self {
        self.style = Some(style);
        self
    }
}

/// Anything that maps queries and observations into the shared space.
pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed_query(&self, query: &Query) -> Result<Embedding>;
    fn embed_observation(&self, observation: &[f64]) -> Result<Embedding>;
}
