use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{retrieve_conditioning, Checkpoint, RetrievalMode, RetrievalPolicy};
use crate::diffusion::{sample_ancestral, CondBatch, ConditioningSet, IdentityCodec, LatentCodec};
use crate::embedding::{Embedder, Query};
use crate::error::{RdmError, Result};
use crate::exec::Exec;
use crate::numerics::Tensor;
use crate::vectordb::VectorDatabase;

/// Rows per sampling chunk; chunk `c` draws its noise from stream `c` of
/// the request seed.
pub const SAMPLE_CHUNK: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SampleMethod {
    /// Neighbors retrieved from the given database.
    DatabaseSwap,
    /// Style token appended to the query, neighbors from the training
    /// database.
    Postfix { style: Option<usize> },
}

/// Where a sample came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleProvenance {
    pub index: usize,
    pub checkpoint: String,
    pub database: String,
    pub database_fingerprint: String,
    pub method: SampleMethod,
    pub query: Query,
    pub neighbor_ids: Vec<String>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutput {
    /// `[n, observation_dim]`.
    pub samples: Tensor,
    pub provenance: Vec<SampleProvenance>,
}

/// Frozen checkpoint plus the embedding space and retrieval settings used
/// to turn queries into samples. Borrowing the checkpoint immutably is what
/// keeps sampling zero-shot: nothing here can change the weights.
#[derive(Clone, Copy)]
pub struct Sampler<'a> {
    pub checkpoint: &'a Checkpoint,
    pub embedder: &'a dyn Embedder,
    pub policy: RetrievalPolicy,
    pub exec: Exec,
}

impl<'a> Sampler<'a> {
    pub fn new(checkpoint: &'a Checkpoint, embedder: &'a dyn Embedder, policy: RetrievalPolicy) -> Self {
        Self {
            checkpoint,
            embedder,
            policy,
            exec: Exec::default(),
        }
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    /// One sample per conditioning set.
    pub fn sample_conditioned(&self, conds: &[ConditioningSet], seed: u64) -> Result<Tensor> {
        let den = &self.checkpoint.denoiser;
        let latent = den.config().latent_dim;
        if conds.is_empty() {
            return Tensor::new(vec![0, latent], vec![]);
        }
        let schedule = self.checkpoint.noise_schedule()?;
        let all = CondBatch::new(&conds.iter().collect::<Vec<_>>())?;
        let chunks = self.exec.map_chunks(conds.len(), SAMPLE_CHUNK, |c, range| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            sample_ancestral(den, &all.slice(range)?, &schedule, &mut rng)
        });
        let mut data = Vec::with_capacity(conds.len() * latent);
        for chunk in chunks {
            data.extend(chunk?.into_data());
        }
        IdentityCodec::new(latent).decode(&Tensor::new(vec![conds.len(), latent], data)?)
    }

    /// One sample per prompt, each conditioned on its own neighbors in `db`.
    pub fn sample_prompts(
        &self,
        prompts: &[Query],
        db: &VectorDatabase,
        seed: u64,
        method: SampleMethod,
    ) -> Result<SampleOutput> {
        let cond_dim = self.checkpoint.denoiser.config().cond_dim;
        if db.dim() != cond_dim || self.embedder.dim() != cond_dim {
            return Err(RdmError::Config(format!(
                "database {} has dim {}, embedder {}, checkpoint expects {cond_dim}",
                db.name(),
                db.dim(),
                self.embedder.dim()
            )));
        }
        let conds: Vec<ConditioningSet> = self
            .exec
            .map(prompts.len(), |i| {
                let q = self.embedder.embed_query(&prompts[i])?;
                retrieve_conditioning(&q, db, &self.policy, RetrievalMode::Infer)
            })
            .into_iter()
            .collect::<Result<_>>()?;
        let samples = self.sample_conditioned(&conds, seed)?;
        let checkpoint = self.checkpoint.hash();
        let fingerprint = db.fingerprint();
        let provenance = prompts
            .iter()
            .zip(&conds)
            .enumerate()
            .map(|(index, (query, cond))| SampleProvenance {
                index,
                checkpoint: checkpoint.clone(),
                database: db.name().to_string(),
                database_fingerprint: fingerprint.clone(),
                method: method.clone(),
                query: query.clone(),
                neighbor_ids: cond.ids().to_vec(),
                seed,
            })
            .collect();
        Ok(SampleOutput { samples, provenance })
    }

    /// `n` samples for `query` with neighbors from `db`.
    pub fn with_database(&self, query: &Query, db: &VectorDatabase, n: usize, seed: u64) -> Result<SampleOutput> {
        self.sample_prompts(&vec![query.clone(); n], db, seed, SampleMethod::DatabaseSwap)
    }

    /// Postfix baseline for several prompts: each gets `style` appended and
    /// retrieves from `db_train`.
    pub fn postfix_prompts(
        &self,
        prompts: &[Query],
        style: Option<usize>,
        db_train: &VectorDatabase,
        seed: u64,
    ) -> Result<SampleOutput> {
        let styled: Vec<Query> = prompts
            .iter()
            .map(|q| match style {
                Some(s) => q.clone().with_style(s),
                None => q.clone(),
            })
            .collect();
        self.sample_prompts(&styled, db_train, seed, SampleMethod::Postfix { style })
    }

    pub fn postfix(
        &self,
        query: &Query,
        style: Option<usize>,
        db_train: &VectorDatabase,
        n: usize,
        seed: u64,
    ) -> Result<SampleOutput> {
        self.postfix_prompts(&vec![query.clone(); n], style, db_train, seed)
    }
}

/// `n` samples for `query`, conditioned on neighbors from `db_style`.
#[allow(clippy::too_many_arguments)]
pub fn sample_with_database(
    checkpoint: &Checkpoint,
    embedder: &dyn Embedder,
    query: &Query,
    db_style: &VectorDatabase,
    policy: &RetrievalPolicy,
    n: usize,
    seed: u64,
    exec: Exec,
) -> Result<SampleOutput> {
    Sampler::new(checkpoint, embedder, *policy)
        .with_exec(exec)
        .with_database(query, db_style, n, seed)
}

/// `n` samples for `query` with `style_token` appended, conditioned on
/// neighbors from the unswapped `db_train`.
#[allow(clippy::too_many_arguments)]
pub fn sample_postfix_baseline(
    checkpoint: &Checkpoint,
    embedder: &dyn Embedder,
    query: &Query,
    style_token: Option<usize>,
    db_train: &VectorDatabase,
    policy: &RetrievalPolicy,
    n: usize,
    seed: u64,
    exec: Exec,
) -> Result<SampleOutput> {
    Sampler::new(checkpoint, embedder, *policy)
        .with_exec(exec)
        .postfix(query, style_token, db_train, n, seed)
}
