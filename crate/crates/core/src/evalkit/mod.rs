//! Desk-scale evaluation: a synthetic world of styled items, a style
//! classifier over embeddings, and the comparison between stylizing by
//! database exchange and stylizing by a style token in the prompt.

mod classifier;
mod comparison;
mod two_mode;

pub use classifier::{train_style_classifier, ClassifierConfig, StyleClassifier};
pub use comparison::{
    relative_improvement, run_style_comparison, Approach, StyleEvalReport, StyleEvalRow, StyleRecord, EPS_DIV,
};
pub use two_mode::{nearest_mode, two_mode_dataset, PlaneSpace, TwoModeData, MODES};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{Embedder, Query, ToyItem, ToySpace, ToySpaceConfig};
use crate::error::{RdmError, Result};
use crate::exec::Exec;
use crate::numerics::Tensor;
use crate::pipeline::TrainItem;
use crate::vectordb::{build_database, DbRecord, PatchPolicy, VectorDatabase};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyWorldSpec {
    pub n_styles: usize,
    /// Database items per style.
    pub items_per_style: usize,
    /// Training items per style, drawn separately from the database items.
    pub train_items_per_style: usize,
    pub content_dim: usize,
    /// Number of content clusters; item content is a prototype plus noise.
    pub content_prototypes: usize,
    pub content_spread: f64,
    pub style_weight: f64,
    pub style_amplitude: f64,
    pub texture_noise: f64,
    pub embed_dim: usize,
    pub obs_dim: usize,
    pub patches: PatchPolicy,
    pub seed: u64,
}

impl Default for ToyWorldSpec {
    fn default() -> Self {
        Self {
            n_styles: 4,
            items_per_style: 250,
            train_items_per_style: 250,
            content_dim: 8,
            content_prototypes: 8,
            content_spread: 0.3,
            style_weight: 1.0,
            style_amplitude: 1.0,
            texture_noise: 0.05,
            embed_dim: 64,
            obs_dim: 32,
            patches: PatchPolicy::Single,
            seed: 0,
        }
    }
}

impl ToyWorldSpec {
    pub fn space_config(&self) -> ToySpaceConfig {
        ToySpaceConfig {
            embed_dim: self.embed_dim,
            content_dim: self.content_dim,
            n_styles: self.n_styles,
            style_weight: self.style_weight,
            obs_dim: self.obs_dim,
            style_amplitude: self.style_amplitude,
            texture_noise: self.texture_noise,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_styles < 2 {
            return Err(RdmError::Config("toy world needs at least 2 styles".into()));
        }
        if self.items_per_style == 0 || self.train_items_per_style == 0 || self.content_prototypes == 0 {
            return Err(RdmError::Config("toy world counts must be at least 1".into()));
        }
        if !(self.content_spread >= 0.0) {
            return Err(RdmError::Config("content_spread must be non-negative".into()));
        }
        ToySpace::new(self.space_config()).map_err(|e| RdmError::Config(e.to_string()))?;
        Ok(())
    }
}

/// Generated corpus with its mixed database and per-style databases.
#[derive(Debug, Clone)]
pub struct ToyWorld {
    pub spec: ToyWorldSpec,
    pub space: ToySpace,
    pub prototypes: Vec<Vec<f64>>,
    /// Database items, style-major.
    pub corpus: Vec<ToyItem>,
    /// Training items, disjoint from the corpus.
    pub train_items: Vec<ToyItem>,
    /// Every corpus record (the training-time database).
    pub db_train: VectorDatabase,
    /// `style_dbs[s]` holds exactly the records of style `s`.
    pub style_dbs: Vec<VectorDatabase>,
}

impl ToyWorld {
    pub fn train_set(&self) -> Result<Vec<TrainItem>> {
        self.train_items
            .iter()
            .map(|it| {
                Ok(TrainItem {
                    id: it.id.clone(),
                    observation: it.observation.clone(),
                    embedding: self.space.embed_item(it)?,
                })
            })
            .collect()
    }

    /// Content drawn like an item's (prototype plus spread).
    pub fn draw_content(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        draw_content(&self.prototypes, self.spec.content_spread, rng)
    }

    /// `n` content-only prompts.
    pub fn content_prompts(&self, n: usize, seed: u64) -> Vec<Query> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| Query::content(self.draw_content(&mut rng))).collect()
    }

    /// Embeddings of real observations with their style labels.
    pub fn labeled_embeddings(&self, items: &[ToyItem]) -> Result<Vec<(crate::embedding::Embedding, usize)>> {
        items
            .iter()
            .map(|it| Ok((self.space.embed_observation(&it.observation)?, it.style)))
            .collect()
    }
}

fn draw_content(prototypes: &[Vec<f64>], spread: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let p = &prototypes[rng.random_range(0..prototypes.len())];
    let noise = Tensor::randn(&[p.len()], spread, rng);
    p.iter().zip(noise.data()).map(|(a, b)| a + b).collect()
}

fn style_of(record: &DbRecord) -> Result<usize> {
    Ok(ToyItem::from_payload(&record.id, &record.payload)?.style)
}

/// Deterministic toy world for `spec`.
pub fn gen_toy_world(spec: &ToyWorldSpec, exec: Exec) -> Result<ToyWorld> {
    spec.validate()?;
    let space = ToySpace::new(spec.space_config())?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x746f_7977);
    let prototypes: Vec<Vec<f64>> = (0..spec.content_prototypes)
        .map(|_| Tensor::randn(&[spec.content_dim], 1.0, &mut rng).into_data())
        .collect();
    let draw = |prefix: &str, per_style: usize, rng: &mut ChaCha8Rng| -> Result<Vec<ToyItem>> {
        let mut items = Vec::with_capacity(per_style * spec.n_styles);
        for s in 0..spec.n_styles {
            for i in 0..per_style {
                let content = draw_content(&prototypes, spec.content_spread, rng);
                items.push(space.make_item(format!("{prefix}s{s}-{i:04}"), content, s, rng.random())?);
            }
        }
        Ok(items)
    };
    let corpus = draw("", spec.items_per_style, &mut rng)?;
    let train_items = draw("train-", spec.train_items_per_style, &mut rng)?;
    let db_train = build_database("train", &corpus, &space, spec.patches, exec)?;

    let mut by_style: Vec<Vec<DbRecord>> = vec![Vec::new(); spec.n_styles];
    for i in 0..db_train.len() {
        let r = db_train.record(i);
        by_style[style_of(&r)?].push(r);
    }
    let style_dbs = by_style
        .into_iter()
        .enumerate()
        .map(|(s, records)| VectorDatabase::from_records(format!("style-{s}"), spec.embed_dim, records))
        .collect::<Result<_>>()?;
    Ok(ToyWorld {
        spec: *spec,
        space,
        prototypes,
        corpus,
        train_items,
        db_train,
        style_dbs,
    })
}
