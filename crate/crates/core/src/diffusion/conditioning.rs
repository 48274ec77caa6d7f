use crate::embedding::Embedding;
use crate::error::{RdmError, Result};
use crate::numerics::{block_mask, Tensor};

/// Non-empty set of unit embeddings a sample is conditioned on, with the
/// id each one was retrieved under.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningSet {
    ids: Vec<String>,
    embeddings: Vec<Embedding>,
}

impl ConditioningSet {
    pub fn new(members: Vec<(String, Embedding)>) -> Result<Self> {
        let Some(first) = members.first() else {
            return Err(RdmError::contract("conditioning set must not be empty"));
        };
        let dim = first.1.dim();
        if let Some((id, e)) = members.iter().find(|(_, e)| e.dim() != dim) {
            return Err(RdmError::contract(format!(
                "conditioning member {id} has dim {}, expected {dim}",
                e.dim()
            )));
        }
        let (ids, embeddings) = members.into_iter().unzip();
        Ok(Self { ids, embeddings })
    }

    pub fn from_embeddings(embeddings: Vec<Embedding>) -> Result<Self> {
        Self::new(
            embeddings
                .into_iter()
                .enumerate()
                .map(|(i, e)| (format!("#{i}"), e))
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings[0].dim()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn embeddings(&self) -> &[Embedding] {
        &self.embeddings
    }
}

/// A batch of conditioning sets stacked into one key matrix. Each batch row
/// attends only to its own set (see [`CondBatch::mask`]).
#[derive(Debug, Clone, PartialEq)]
pub struct CondBatch {
    /// `[Σ|C_i|, d]`.
    pub keys: Tensor,
    pub sizes: Vec<usize>,
}

impl CondBatch {
    pub fn new(sets: &[&ConditioningSet]) -> Result<Self> {
        let Some(first) = sets.first() else {
            return Err(RdmError::contract("empty conditioning batch"));
        };
        let d = first.dim();
        let mut data = Vec::new();
        let mut sizes = Vec::with_capacity(sets.len());
        for s in sets {
            if s.dim() != d {
                return Err(RdmError::contract(format!(
                    "conditioning dims differ: {} vs {d}",
                    s.dim()
                )));
            }
            sizes.push(s.len());
            for e in s.embeddings() {
                data.extend(e.as_slice().iter().map(|&x| x as f64));
            }
        }
        let total = data.len() / d;
        Ok(Self {
            keys: Tensor::new(vec![total, d], data)?,
            sizes,
        })
    }

    /// The same set for each of `b` rows.
    pub fn repeat(set: &ConditioningSet, b: usize) -> Result<Self> {
        Self::new(&vec![set; b])
    }

    /// `[B, Σ|C_i|]`, 0 inside a row's block and a large negative elsewhere.
    pub fn mask(&self) -> Tensor {
        block_mask(&self.sizes)
    }

    pub fn batch(&self) -> usize {
        self.sizes.len()
    }

    pub fn dim(&self) -> usize {
        self.keys.shape()[1]
    }

    /// Rows `range` of the batch as a batch of their own.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<Self> {
        let d = self.dim();
        let start: usize = self.sizes[..range.start].iter().sum();
        let sizes = self.sizes[range].to_vec();
        let len: usize = sizes.iter().sum();
        let keys = Tensor::new(vec![len, d], self.keys.data()[start * d..(start + len) * d].to_vec())?;
        Ok(Self {
            keys,
            sizes,
        })
    }
}
