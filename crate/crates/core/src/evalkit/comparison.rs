use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::classifier::argmax;
use super::StyleClassifier;
use crate::embedding::{Embedder, Embedding, Query};
use crate::error::{RdmError, Result};
use crate::pipeline::{Checkpoint, RetrievalPolicy, SampleOutput, SampleProvenance, Sampler};
use crate::exec::Exec;
use crate::vectordb::VectorDatabase;

/// Guards the relative improvement when the baseline scores zero.
pub const EPS_DIV: f64 = 1e-9;

/// `(acc_retrieval − acc_postfix) / max(acc_postfix, EPS_DIV)`.
pub fn relative_improvement(acc_retrieval: f64, acc_postfix: f64) -> f64 {
    (acc_retrieval - acc_postfix) / acc_postfix.max(EPS_DIV)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Approach {
    Retrieval,
    Postfix,
}

/// One classified sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleRecord {
    pub target_style: usize,
    pub approach: Approach,
    pub predicted_style: usize,
    pub logits: Vec<f64>,
    pub provenance: SampleProvenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleEvalRow {
    pub style: usize,
    pub n_retrieval: usize,
    pub n_postfix: usize,
    pub acc_retrieval: f64,
    pub acc_postfix: f64,
    pub relative_improvement: f64,
    /// Mean pre-softmax classifier scores over each approach's samples.
    pub mean_logits_retrieval: Vec<f64>,
    pub mean_logits_postfix: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleEvalReport {
    pub n_per_style: usize,
    pub seed: u64,
    pub rows: Vec<StyleEvalRow>,
    pub records: Vec<StyleRecord>,
}

fn summarize(records: &[&StyleRecord], style: usize, n_classes: usize) -> (usize, f64, Vec<f64>) {
    let n = records.len();
    let hits = records.iter().filter(|r| r.predicted_style == style).count();
    let mut mean = vec![0.0; n_classes];
    for r in records {
        for (m, l) in mean.iter_mut().zip(&r.logits) {
            *m += l / n as f64;
        }
    }
    (n, if n == 0 { 0.0 } else { hits as f64 / n as f64 }, mean)
}

impl StyleEvalReport {
    /// Rebuilds the per-style rows from the raw records.
    pub fn from_records(n_per_style: usize, seed: u64, n_classes: usize, records: Vec<StyleRecord>) -> Self {
        let rows = (0..n_classes)
            .map(|s| {
                let pick = |a: Approach| -> Vec<&StyleRecord> {
                    records
                        .iter()
                        .filter(|r| r.target_style == s && r.approach == a)
                        .collect()
                };
                let (n_r, acc_r, logits_r) = summarize(&pick(Approach::Retrieval), s, n_classes);
                let (n_p, acc_p, logits_p) = summarize(&pick(Approach::Postfix), s, n_classes);
                StyleEvalRow {
                    style: s,
                    n_retrieval: n_r,
                    n_postfix: n_p,
                    acc_retrieval: acc_r,
                    acc_postfix: acc_p,
                    relative_improvement: relative_improvement(acc_r, acc_p),
                    mean_logits_retrieval: logits_r,
                    mean_logits_postfix: logits_p,
                }
            })
            .collect();
        Self {
            n_per_style,
            seed,
            rows,
            records,
        }
    }

    /// True when the rows agree with a recount of the records.
    pub fn recount_matches(&self) -> bool {
        let n_classes = self.rows.len();
        let again = Self::from_records(self.n_per_style, self.seed, n_classes, self.records.clone());
        again.rows == self.rows
    }

    /// Styles where retrieval is at least as accurate as the postfix.
    pub fn retrieval_wins(&self) -> usize {
        self.rows.iter().filter(|r| r.acc_retrieval >= r.acc_postfix).count()
    }

    pub fn to_table(&self) -> String {
        let mut out = String::from("style  n   acc_retrieval  acc_postfix  rel_improvement\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<6} {:<3} {:<14.4} {:<12.4} {:.4}",
                r.style, r.n_retrieval, r.acc_retrieval, r.acc_postfix, r.relative_improvement
            );
        }
        out
    }

    /// `style,relative_improvement` lines for plotting.
    pub fn plot_data(&self) -> String {
        let mut out = String::from("style,relative_improvement\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{}", r.style, r.relative_improvement);
        }
        out
    }
}

fn classify(
    out: SampleOutput,
    embedder: &dyn Embedder,
    classifier: &StyleClassifier,
    target_style: usize,
    approach: Approach,
) -> Result<Vec<StyleRecord>> {
    let embeddings: Vec<Embedding> = (0..out.samples.dims2().0)
        .map(|i| embedder.embed_observation(out.samples.row_slice(i)))
        .collect::<Result<_>>()?;
    let logits = classifier.logits(&embeddings.iter().collect::<Vec<_>>())?;
    Ok(out
        .provenance
        .into_iter()
        .enumerate()
        .map(|(i, provenance)| StyleRecord {
            target_style,
            approach,
            predicted_style: argmax(logits.row_slice(i)),
            logits: logits.row_slice(i).to_vec(),
            provenance,
        })
        .collect())
}

/// For every style `s`, samples `n_per_style` prompts twice: once with
/// neighbors from `style_dbs[s]` and once with style token `s` appended and
/// neighbors from `db_train`. Both runs of a style share a seed.
#[allow(clippy::too_many_arguments)]
pub fn run_style_comparison(
    checkpoint: &Checkpoint,
    embedder: &dyn Embedder,
    classifier: &StyleClassifier,
    prompts: &[Query],
    style_dbs: &[VectorDatabase],
    db_train: &VectorDatabase,
    policy: &RetrievalPolicy,
    n_per_style: usize,
    seed: u64,
    exec: Exec,
) -> Result<StyleEvalReport> {
    let n_classes = classifier.n_classes();
    if style_dbs.len() < n_classes {
        let missing: Vec<String> = (style_dbs.len()..n_classes).map(|s| s.to_string()).collect();
        return Err(RdmError::contract(format!(
            "missing style databases for styles {}",
            missing.join(", ")
        )));
    }
    if n_per_style == 0 || prompts.is_empty() {
        return Err(RdmError::contract("need at least one prompt and one sample per style"));
    }
    let prompts: Vec<Query> = prompts.iter().cycle().take(n_per_style).cloned().collect();
    let sampler = Sampler::new(checkpoint, embedder, *policy).with_exec(exec);
    let mut records = Vec::with_capacity(2 * n_per_style * n_classes);
    for (s, db) in style_dbs.iter().enumerate().take(n_classes) {
        let style_seed = seed.wrapping_add(s as u64);
        let swap = sampler.sample_prompts(&prompts, db, style_seed, crate::pipeline::SampleMethod::DatabaseSwap)?;
        records.extend(classify(swap, embedder, classifier, s, Approach::Retrieval)?);
        let postfix = sampler.postfix_prompts(&prompts, Some(s), db_train, style_seed)?;
        records.extend(classify(postfix, embedder, classifier, s, Approach::Postfix)?);
        log::info!("style {s}: sampled {n_per_style} per approach");
    }
    Ok(StyleEvalReport::from_records(n_per_style, seed, n_classes, records))
}
