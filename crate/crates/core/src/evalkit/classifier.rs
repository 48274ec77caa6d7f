use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::Embedding;
use crate::error::{RdmError, Result};
use crate::numerics::{adam_step, AdamConfig, AdamState, BoundParams, Graph, ParamStore, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            epochs: 40,
            batch_size: 64,
            lr: 5e-3,
            seed: 0,
        }
    }
}

/// Two-layer perceptron `d → hidden → S` with a SiLU in between.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleClassifier {
    params: ParamStore,
    n_classes: usize,
}

fn stack(embeddings: &[&Embedding]) -> Result<Tensor> {
    let d = embeddings.first().map_or(0, |e| e.dim());
    let data = embeddings
        .iter()
        .flat_map(|e| e.as_slice().iter().map(|&x| x as f64))
        .collect();
    Tensor::new(vec![embeddings.len(), d], data)
}

impl StyleClassifier {
    /// Random first layer, zero output layer: every input scores 0 for
    /// every class.
    pub fn untrained(dim: usize, n_classes: usize, hidden: usize, seed: u64) -> Result<Self> {
        if dim == 0 || hidden == 0 || n_classes < 2 {
            return Err(RdmError::contract("classifier needs dim, hidden ≥ 1 and ≥ 2 classes"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        params.insert("fc1.weight", Tensor::randn(&[dim, hidden], 1.0 / (dim as f64).sqrt(), &mut rng))?;
        params.insert("fc1.bias", Tensor::zeros(&[hidden]))?;
        params.insert("fc2.weight", Tensor::zeros(&[hidden, n_classes]))?;
        params.insert("fc2.bias", Tensor::zeros(&[n_classes]))?;
        Ok(Self { params, n_classes })
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn dim(&self) -> usize {
        self.params.get("fc1.weight").map_or(0, |w| w.shape()[0])
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    fn forward(g: &mut Graph, p: &BoundParams, x: Var) -> Result<Var> {
        let h = g.linear(x, p.get("fc1.weight")?, Some(p.get("fc1.bias")?))?;
        let h = g.silu(h);
        g.linear(h, p.get("fc2.weight")?, Some(p.get("fc2.bias")?))
    }

    /// Pre-softmax scores, `[n, S]`.
    pub fn logits(&self, embeddings: &[&Embedding]) -> Result<Tensor> {
        if embeddings.is_empty() {
            return Tensor::new(vec![0, self.n_classes], vec![]);
        }
        if let Some(e) = embeddings.iter().find(|e| e.dim() != self.dim()) {
            return Err(RdmError::contract(format!(
                "classifier expects dim {}, got {}",
                self.dim(),
                e.dim()
            )));
        }
        let mut g = Graph::new();
        let p = self.params.bind_frozen(&mut g);
        let x = g.constant(stack(embeddings)?);
        let out = Self::forward(&mut g, &p, x)?;
        Ok(g.value(out).clone())
    }

    pub fn probabilities(&self, embeddings: &[&Embedding]) -> Result<Tensor> {
        let logits = self.logits(embeddings)?;
        let mut g = Graph::new();
        let l = g.constant(logits);
        let p = g.softmax(l);
        Ok(g.value(p).clone())
    }

    /// Highest-scoring class of every embedding (ties go to the lower class).
    pub fn predict(&self, embeddings: &[&Embedding]) -> Result<Vec<usize>> {
        let logits = self.logits(embeddings)?;
        Ok((0..embeddings.len()).map(|i| argmax(logits.row_slice(i))).collect())
    }

    pub fn accuracy(&self, data: &[(Embedding, usize)]) -> Result<f64> {
        if data.is_empty() {
            return Err(RdmError::contract("accuracy of an empty set"));
        }
        let refs: Vec<&Embedding> = data.iter().map(|(e, _)| e).collect();
        let pred = self.predict(&refs)?;
        let hits = pred.iter().zip(data).filter(|(p, (_, y))| *p == y).count();
        Ok(hits as f64 / data.len() as f64)
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Mini-batch Adam on cross-entropy. Returns the classifier and its top-1
/// accuracy on `val`.
pub fn train_style_classifier(
    train: &[(Embedding, usize)],
    val: &[(Embedding, usize)],
    config: &ClassifierConfig,
) -> Result<(StyleClassifier, f64)> {
    let classes: std::collections::BTreeSet<usize> = train.iter().map(|(_, y)| *y).collect();
    if classes.len() < 2 {
        return Err(RdmError::contract("classifier training data must contain at least 2 classes"));
    }
    if val.is_empty() || config.batch_size == 0 {
        return Err(RdmError::contract("need a validation set and a positive batch size"));
    }
    let n_classes = classes.last().copied().unwrap_or(0) + 1;
    let dim = train[0].0.dim();
    let mut clf = StyleClassifier::untrained(dim, n_classes, config.hidden, config.seed)?;
    let mut state = AdamState::new(AdamConfig {
        lr: config.lr,
        ..AdamConfig::default()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..train.len()).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let refs: Vec<&Embedding> = batch.iter().map(|&i| &train[i].0).collect();
            let mut onehot = vec![0.0; batch.len() * n_classes];
            for (r, &i) in batch.iter().enumerate() {
                onehot[r * n_classes + train[i].1] = 1.0;
            }
            let mut g = Graph::new();
            let p = clf.params.bind(&mut g);
            let x = g.constant(stack(&refs)?);
            let logits = StyleClassifier::forward(&mut g, &p, x)?;
            let logp = g.log_softmax(logits);
            let y = g.constant(Tensor::new(vec![batch.len(), n_classes], onehot)?);
            let picked = g.mul(logp, y)?;
            let total = g.sum(picked);
            let loss = g.scale(total, -1.0 / batch.len() as f64);
            let grads = g.backward(loss)?.param_grads();
            adam_step(&mut clf.params, &grads, &mut state)?;
        }
    }
    let acc = clf.accuracy(val)?;
    log::info!("style classifier: validation top-1 {acc:.4}");
    Ok((clf, acc))
}
