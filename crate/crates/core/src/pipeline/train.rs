use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{retrieve_conditioning, Checkpoint, RetrievalMode, TrainConfig};
use crate::diffusion::{rdm_loss, CondBatch, ConditioningSet, IdentityCodec};
use crate::embedding::Embedding;
use crate::error::{RdmError, Result};
use crate::exec::Exec;
use crate::numerics::{accumulate_grads, adam_step, GradMap, Graph, Tensor};
use crate::vectordb::VectorDatabase;

/// One training example: the observation to reconstruct and the embedding
/// used to look up its neighbors.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainItem {
    pub id: String,
    pub observation: Vec<f64>,
    pub embedding: Embedding,
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions<'a> {
    pub exec: Exec,
    /// Where periodic and final checkpoints go.
    pub checkpoint_dir: Option<&'a Path>,
    /// Continue from this state instead of a fresh initialization.
    pub resume: Option<Checkpoint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    /// Mean batch loss of every step taken in this run.
    pub loss_log: Vec<f64>,
}

struct StepBatch {
    rows: Vec<usize>,
    t: Vec<usize>,
    eps: Tensor,
}

fn draw_batch(seed: u64, step: u64, n: usize, b: usize, timesteps: usize, latent: usize) -> StepBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    let rows = (0..b).map(|_| rng.random_range(0..n)).collect();
    let t = (0..b).map(|_| rng.random_range(1..=timesteps)).collect();
    let eps = Tensor::randn(&[b, latent], 1.0, &mut rng);
    StepBatch { rows, t, eps }
}

/// Trains the denoiser on `corpus` with neighbors drawn from `db_train`.
///
/// Every step draws a batch, timesteps and noise from a generator keyed by
/// `(seed, step)`, so runs are reproducible and resumable. A non-finite loss
/// aborts with [`RdmError::Diverged`] carrying the last good state.
pub fn train_rdm(
    config: &TrainConfig,
    corpus: &[TrainItem],
    db_train: &VectorDatabase,
    opts: TrainOptions<'_>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let dc = &config.denoiser;
    if corpus.is_empty() {
        return Err(RdmError::Config("training corpus is empty".into()));
    }
    if let Some(item) = corpus.iter().find(|i| i.observation.len() != dc.latent_dim) {
        return Err(RdmError::Config(format!(
            "item {} has {} observation dims, denoiser expects {}",
            item.id,
            item.observation.len(),
            dc.latent_dim
        )));
    }
    if let Some(item) = corpus.iter().find(|i| i.embedding.dim() != db_train.dim()) {
        return Err(RdmError::Config(format!(
            "item {} embedding dim {} != database dim {}",
            item.id,
            item.embedding.dim(),
            db_train.dim()
        )));
    }
    if db_train.dim() != dc.cond_dim {
        return Err(RdmError::Config(format!(
            "database dim {} != denoiser conditioning dim {}",
            db_train.dim(),
            dc.cond_dim
        )));
    }
    let schedule = config.schedule.build()?;
    let mut ckpt = match opts.resume {
        Some(c) => {
            if c.denoiser.config() != dc || c.schedule != config.schedule {
                return Err(RdmError::Config("resume checkpoint does not match the config".into()));
            }
            c
        }
        None => Checkpoint::init(*dc, config.schedule, config.train.optimizer)?,
    };

    let exec = opts.exec;
    let conds: Vec<ConditioningSet> = exec
        .map(corpus.len(), |i| {
            retrieve_conditioning(&corpus[i].embedding, db_train, &config.retrieval, RetrievalMode::Train)
        })
        .into_iter()
        .collect::<Result<_>>()?;

    let codec = IdentityCodec::new(dc.latent_dim);
    let ts = &config.train;
    let b = ts.batch_size;
    let mut loss_log = Vec::with_capacity(ts.steps.saturating_sub(ckpt.step) as usize);
    for step in ckpt.step + 1..=ts.steps {
        let batch = draw_batch(ts.seed, step, corpus.len(), b, schedule.timesteps(), dc.latent_dim);
        let den = &ckpt.denoiser;
        let shards = exec.map_chunks(b, ts.shard_size, |_, range| -> Result<(f64, GradMap, usize)> {
            let rows = &batch.rows[range.clone()];
            let x: Vec<f64> = rows.iter().flat_map(|&r| corpus[r].observation.iter().copied()).collect();
            let x = Tensor::new(vec![rows.len(), dc.latent_dim], x)?;
            let sets: Vec<&ConditioningSet> = rows.iter().map(|&r| &conds[r]).collect();
            let cond = CondBatch::new(&sets)?;
            let eps = Tensor::new(
                vec![rows.len(), dc.latent_dim],
                batch.eps.data()[range.start * dc.latent_dim..range.end * dc.latent_dim].to_vec(),
            )?;
            let mut g = Graph::new();
            let loss = rdm_loss(&mut g, den, &codec, &x, &cond, &batch.t[range.clone()], &eps, &schedule)?;
            let value = g.value(loss).item();
            let grads = g.backward(loss)?.param_grads();
            Ok((value, grads, rows.len()))
        });
        let mut loss = 0.0;
        let mut grads = GradMap::new();
        for shard in shards {
            let (value, shard_grads, rows) = match shard {
                Ok(s) => s,
                Err(RdmError::Numeric { op }) => {
                    log::error!("step {step}: non-finite value in {op}");
                    return Err(RdmError::Diverged {
                        step,
                        last_good: Box::new(ckpt),
                    });
                }
                Err(e) => return Err(e),
            };
            let w = rows as f64 / b as f64;
            loss += w * value;
            let scaled = shard_grads.into_iter().map(|(k, g)| (k, g.map(|x| x * w))).collect();
            accumulate_grads(&mut grads, scaled);
        }
        if !loss.is_finite() {
            return Err(RdmError::Diverged {
                step,
                last_good: Box::new(ckpt),
            });
        }
        adam_step(ckpt.denoiser.params_mut(), &grads, &mut ckpt.optimizer)?;
        ckpt.step = step;
        loss_log.push(loss);
        if ts.log_every > 0 && step % ts.log_every == 0 {
            let from = loss_log.len().saturating_sub(ts.log_every as usize);
            let window = &loss_log[from..];
            log::info!(
                "step {step}/{}: mean loss {:.5}",
                ts.steps,
                window.iter().sum::<f64>() / window.len() as f64
            );
        }
        if let Some(dir) = opts.checkpoint_dir {
            if ts.checkpoint_every > 0 && step % ts.checkpoint_every == 0 {
                ckpt.save(dir)?;
            }
        }
    }
    if let Some(dir) = opts.checkpoint_dir {
        ckpt.save(dir)?;
    }
    Ok(TrainOutcome {
        checkpoint: ckpt,
        loss_log,
    })
}
