//! The external memory: immutable databases of embeddings with exact and
//! IVF-partitioned cosine search, plus on-disk persistence.

mod ivf;
mod search;
mod store;

pub use ivf::{IvfIndex, IvfParams};
pub use search::{Neighbor, Neighbors};
pub use store::{load_database, save_database, DatabaseMeta};

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{Embedding, ToyItem, ToySpace};
use crate::error::{RdmError, Result};
use crate::exec::Exec;
use crate::numerics::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct DbRecord {
    pub id: String,
    pub embedding: Embedding,
    pub payload: Vec<u8>,
}

/// How many views ("patches") of each item enter the database.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PatchPolicy {
    /// One record per item.
    Single,
    /// `min..=max` views per item: the item itself plus jittered copies
    /// whose content is perturbed by Gaussian noise of std-dev `jitter`.
    Jittered {
        min: usize,
        max: usize,
        jitter: f64,
        seed: u64,
    },
}

impl Default for PatchPolicy {
    fn default() -> Self {
        PatchPolicy::Single
    }
}

impl PatchPolicy {
    /// Two or three views per item.
    pub fn two_to_three(seed: u64) -> Self {
        PatchPolicy::Jittered {
            min: 2,
            max: 3,
            jitter: 0.05,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if let PatchPolicy::Jittered { min, max, jitter, .. } = *self {
            if min < 1 || min > max || max > 3 || !(jitter >= 0.0) {
                return Err(RdmError::contract(format!(
                    "patch policy needs 1 ≤ min ≤ max ≤ 3 and jitter ≥ 0, got {min}..={max}, {jitter}"
                )));
            }
        }
        Ok(())
    }

    fn views(&self, space: &ToySpace, item: &ToyItem, item_index: usize) -> Result<Vec<ToyItem>> {
        match *self {
            PatchPolicy::Single => Ok(vec![item.clone()]),
            PatchPolicy::Jittered {
                min,
                max,
                jitter,
                seed,
            } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(item_index as u64);
                let n = rng.random_range(min..=max);
                let mut out = vec![item.clone()];
                for j in 1..n {
                    let noise = Tensor::randn(&[item.content.len()], jitter, &mut rng);
                    let content: Vec<f64> =
                        item.content.iter().zip(noise.data()).map(|(c, e)| c + e).collect();
                    let tex_seed = rng.random::<u64>();
                    out.push(space.make_item(
                        format!("{}#p{j}", item.id),
                        content,
                        item.style,
                        tex_seed,
                    )?);
                }
                Ok(out)
            }
        }
    }
}

/// Immutable set of `(id, embedding, payload)` records with an optional
/// IVF index. Nothing mutates a built database; indexing consumes it and
/// returns a new one.
#[derive(Debug, Clone)]
pub struct VectorDatabase {
    name: String,
    dim: usize,
    ids: Vec<String>,
    /// `count × dim`, row-major.
    vectors: Vec<f32>,
    inv_norms: Vec<f64>,
    payloads: Vec<Vec<u8>>,
    /// Position of each id in ascending id order (tie-breaking key).
    id_rank: Vec<u32>,
    index: Option<IvfIndex>,
}

impl PartialEq for VectorDatabase {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.dim == other.dim
            && self.ids == other.ids
            && self.vectors == other.vectors
            && self.payloads == other.payloads
            && self.index == other.index
    }
}

impl VectorDatabase {
    pub fn from_records(name: impl Into<String>, dim: usize, records: Vec<DbRecord>) -> Result<Self> {
        if dim == 0 {
            return Err(RdmError::Build("database dim must be positive".into()));
        }
        let mut seen = HashSet::with_capacity(records.len());
        let mut ids = Vec::with_capacity(records.len());
        let mut vectors = Vec::with_capacity(records.len() * dim);
        let mut payloads = Vec::with_capacity(records.len());
        for r in records {
            if r.embedding.dim() != dim {
                return Err(RdmError::Build(format!(
                    "record {} has dim {}, database dim is {dim}",
                    r.id,
                    r.embedding.dim()
                )));
            }
            if !seen.insert(r.id.clone()) {
                return Err(RdmError::Build(format!("duplicate id {}", r.id)));
            }
            vectors.extend_from_slice(r.embedding.as_slice());
            ids.push(r.id);
            payloads.push(r.payload);
        }
        Ok(Self::from_parts(name.into(), dim, ids, vectors, payloads))
    }

    fn from_parts(
        name: String,
        dim: usize,
        ids: Vec<String>,
        vectors: Vec<f32>,
        payloads: Vec<Vec<u8>>,
    ) -> Self {
        let inv_norms = vectors
            .chunks(dim)
            .map(|v| 1.0 / v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt())
            .collect();
        let mut order: Vec<usize> = (0..ids.len()).collect();
        order.sort_by(|&a, &b| ids[a].cmp(&ids[b]));
        let mut id_rank = vec![0u32; ids.len()];
        for (rank, &i) in order.iter().enumerate() {
            id_rank[i] = rank as u32;
        }
        Self {
            name,
            dim,
            ids,
            vectors,
            inv_norms,
            payloads,
            id_rank,
            index: None,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Same records under a different name.
    pub fn renamed(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    pub fn vector(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn embedding(&self, i: usize) -> Embedding {
        Embedding::coerce(self.vector(i).to_vec())
            .expect("stored vectors are unit-norm")
            .0
    }

    pub fn payload(&self, i: usize) -> &[u8] {
        &self.payloads[i]
    }

    pub fn record(&self, i: usize) -> DbRecord {
        DbRecord {
            id: self.ids[i].clone(),
            embedding: self.embedding(i),
            payload: self.payloads[i].clone(),
        }
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    pub fn index(&self) -> Option<&IvfIndex> {
        self.index.as_ref()
    }

    /// Content fingerprint over names, ids, vectors, payloads and index.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(self.name.as_bytes());
        h.update((self.dim as u64).to_le_bytes());
        for (i, id) in self.ids.iter().enumerate() {
            h.update(id.as_bytes());
            h.update([0]);
            for v in self.vector(i) {
                h.update(v.to_le_bytes());
            }
            h.update(&self.payloads[i]);
        }
        if let Some(ix) = &self.index {
            h.update(ix.to_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Embeds every view of every item and stores it with its payload.
pub fn build_database(
    name: impl Into<String>,
    items: &[ToyItem],
    space: &ToySpace,
    patching: PatchPolicy,
    exec: Exec,
) -> Result<VectorDatabase> {
    use crate::embedding::Embedder;
    if items.is_empty() {
        return Err(RdmError::Build("cannot build a database from an empty corpus".into()));
    }
    patching.validate()?;
    let per_item: Vec<Result<Vec<DbRecord>>> = exec.map(items.len(), |i| {
        patching
            .views(space, &items[i], i)?
            .into_iter()
            .map(|view| {
                Ok(DbRecord {
                    embedding: space.embed_item(&view)?,
                    payload: view.to_payload(),
                    id: view.id,
                })
            })
            .collect()
    });
    let mut records = Vec::with_capacity(items.len() * 3);
    for r in per_item {
        records.extend(r?);
    }
    VectorDatabase::from_records(name, space.dim(), records)
}
