//! End-to-end workflow: neighbor retrieval, the training loop, checkpoints
//! and sampling with a swappable database.

mod checkpoint;
mod config;
mod sample;
mod train;

pub use checkpoint::Checkpoint;
pub use config::{ExperimentConfig, TrainConfig, TrainSettings};
pub use sample::{
    sample_postfix_baseline, sample_with_database, SampleMethod, SampleOutput, SampleProvenance, Sampler,
    SAMPLE_CHUNK,
};
pub use train::{train_rdm, TrainItem, TrainOptions, TrainOutcome};

use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use crate::diffusion::ConditioningSet;
use crate::embedding::Embedding;
use crate::error::{RdmError, Result};
use crate::vectordb::VectorDatabase;

/// Id under which a prepended query embedding appears in a conditioning set.
pub const QUERY_ID: &str = "<query>";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrievalPolicy {
    pub k_train: usize,
    pub k_infer: usize,
    /// Prepend the query embedding to the inference conditioning set.
    pub include_query_embedding: bool,
    /// Training neighbors at least this similar to the query are dropped.
    pub exclude_self_threshold: f64,
    /// Lists probed when the database carries an IVF index.
    pub n_probe: usize,
}

impl Default for RetrievalPolicy {
    fn default() -> Self {
        Self {
            k_train: 8,
            k_infer: 19,
            include_query_embedding: true,
            exclude_self_threshold: 1.0 - 1e-6,
            n_probe: 4,
        }
    }
}

impl RetrievalPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.k_train == 0 || self.k_infer == 0 || self.n_probe == 0 {
            return Err(RdmError::Config("k_train, k_infer and n_probe must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RetrievalMode {
    Train,
    Infer,
}

/// The conditioning set for `query`: its nearest neighbors in `db`, with
/// near-duplicates of the query removed when training and the query itself
/// prepended at inference when the policy asks for it.
pub fn retrieve_conditioning(
    query: &Embedding,
    db: &VectorDatabase,
    policy: &RetrievalPolicy,
    mode: RetrievalMode,
) -> Result<ConditioningSet> {
    policy.validate()?;
    match mode {
        RetrievalMode::Train => {
            let mut want = policy.k_train + 4;
            loop {
                let hits = db.search(query, want, policy.n_probe)?;
                let kept: Vec<_> = hits
                    .hits
                    .iter()
                    .filter(|h| h.similarity < policy.exclude_self_threshold)
                    .take(policy.k_train)
                    .collect();
                if kept.len() == policy.k_train || hits.truncated || want >= db.len() {
                    if kept.is_empty() {
                        return Err(RdmError::DegenerateDatabase);
                    }
                    return ConditioningSet::new(
                        kept.iter()
                            .map(|h| (h.id.clone(), db.embedding(h.index)))
                            .collect(),
                    );
                }
                want = (want * 2).min(db.len());
            }
        }
        RetrievalMode::Infer => {
            let hits = db.search(query, policy.k_infer, policy.n_probe)?;
            let mut members = Vec::with_capacity(hits.len() + 1);
            if policy.include_query_embedding {
                members.push((QUERY_ID.to_string(), query.clone()));
            }
            members.extend(hits.hits.iter().map(|h| (h.id.clone(), db.embedding(h.index))));
            ConditioningSet::new(members)
        }
    }
}

/// Shared, atomically replaceable reference to the current database.
///
/// Readers take a snapshot with [`DatabaseHandle::current`] and keep using
/// it for the whole request, so a concurrent [`DatabaseHandle::swap`] never
/// produces a mix of two databases.
#[derive(Debug)]
pub struct DatabaseHandle {
    inner: RwLock<Arc<VectorDatabase>>,
}

impl DatabaseHandle {
    pub fn new(db: VectorDatabase) -> Self {
        Self {
            inner: RwLock::new(Arc::new(db)),
        }
    }

    pub fn current(&self) -> Arc<VectorDatabase> {
        self.inner.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    /// Installs `db` and returns the previous database.
    pub fn swap(&self, db: VectorDatabase) -> Arc<VectorDatabase> {
        let mut guard = self.inner.write().unwrap_or_else(|e| e.into_inner());
        std::mem::replace(&mut *guard, Arc::new(db))
    }
}
