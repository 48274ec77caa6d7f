use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::embedding::{Embedder, Embedding, Query};
use crate::error::{RdmError, Result};
use crate::numerics::Tensor;
use crate::pipeline::TrainItem;
use crate::vectordb::{DbRecord, VectorDatabase};

/// Centers of the two modes.
pub const MODES: [[f64; 2]; 2] = [[1.0, 1.0], [-1.0, -1.0]];

/// Embeds 2-D points (and content-only queries) by their direction.
#[derive(Debug, Clone, Copy, Default)]
pub struct PlaneSpace;

impl Embedder for PlaneSpace {
    fn dim(&self) -> usize {
        2
    }

    fn embed_query(&self, query: &Query) -> Result<Embedding> {
        match &query.content {
            Some(c) if c.len() == 2 => Embedding::normalize(c),
            _ => Err(RdmError::contract("plane queries need 2-D content")),
        }
    }

    fn embed_observation(&self, observation: &[f64]) -> Result<Embedding> {
        if observation.len() != 2 {
            return Err(RdmError::contract("plane observations are 2-D"));
        }
        Embedding::normalize(observation)
    }
}

/// Index of the mode center closest to `x`.
pub fn nearest_mode(x: &[f64]) -> usize {
    let d = |m: &[f64; 2]| (x[0] - m[0]).powi(2) + (x[1] - m[1]).powi(2);
    if d(&MODES[1]) < d(&MODES[0]) {
        1
    } else {
        0
    }
}

#[derive(Debug, Clone)]
pub struct TwoModeData {
    pub train: Vec<TrainItem>,
    /// Separately drawn points from both modes.
    pub db: VectorDatabase,
    /// Database records of each mode.
    pub mode_dbs: [VectorDatabase; 2],
}

/// Points `MODES[m] + N(0, sigma²)`, alternating modes.
pub fn two_mode_dataset(n_per_mode: usize, sigma: f64, seed: u64) -> Result<TwoModeData> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let point = |m: usize, rng: &mut ChaCha8Rng| -> Vec<f64> {
        let n = Tensor::randn(&[2], sigma, rng);
        vec![MODES[m][0] + n.data()[0], MODES[m][1] + n.data()[1]]
    };
    let mut train = Vec::with_capacity(2 * n_per_mode);
    let mut records = [Vec::new(), Vec::new()];
    for i in 0..2 * n_per_mode {
        let m = i % 2;
        let x = point(m, &mut rng);
        train.push(TrainItem {
            id: format!("x{i:05}"),
            embedding: Embedding::normalize(&x)?,
            observation: x,
        });
        let y = point(m, &mut rng);
        records[m].push(DbRecord {
            id: format!("m{m}-{i:05}"),
            embedding: Embedding::normalize(&y)?,
            payload: Vec::new(),
        });
    }
    let all: Vec<DbRecord> = records.iter().flatten().cloned().collect();
    let [a, b] = records;
    Ok(TwoModeData {
        train,
        db: VectorDatabase::from_records("two-mode", 2, all)?,
        mode_dbs: [
            VectorDatabase::from_records("mode-0", 2, a)?,
            VectorDatabase::from_records("mode-1", 2, b)?,
        ],
    })
}
