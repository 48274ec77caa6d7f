use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::VectorDatabase;
use crate::embedding::{dot_f32, Embedding};
use crate::error::{RdmError, Result};
use crate::exec::Exec;

#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor {
    pub id: String,
    /// Position of the record inside its database.
    pub index: usize,
    pub similarity: f64,
}

/// Top-k result: similarities non-increasing, ties by ascending id.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighbors {
    pub hits: Vec<Neighbor>,
    pub query: Embedding,
    pub k: usize,
    /// Fewer than `k` hits were available.
    pub truncated: bool,
}

impl Neighbors {
    pub fn ids(&self) -> Vec<&str> {
        self.hits.iter().map(|h| h.id.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.hits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hits.is_empty()
    }
}

/// Heap entry ordered so that the *worst* candidate is the maximum.
#[derive(Debug, Clone, Copy)]
pub(super) struct Candidate {
    pub sim: f64,
    pub rank: u32,
    pub idx: u32,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .sim
            .total_cmp(&self.sim)
            .then(self.rank.cmp(&other.rank))
    }
}

/// Bounded collector of the best `k` candidates.
pub(super) struct TopK {
    k: usize,
    heap: BinaryHeap<Candidate>,
}

impl TopK {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    #[inline]
    pub fn offer(&mut self, c: Candidate) {
        if self.heap.len() < self.k {
            self.heap.push(c);
        } else if let Some(worst) = self.heap.peek() {
            if c < *worst {
                self.heap.pop();
                self.heap.push(c);
            }
        }
    }

    pub fn into_sorted(self) -> Vec<Candidate> {
        self.heap.into_sorted_vec()
    }
}

impl VectorDatabase {
    pub(super) fn check_query(&self, query: &Embedding, k: usize) -> Result<f64> {
        if k == 0 {
            return Err(RdmError::contract("k must be at least 1"));
        }
        if self.is_empty() {
            return Err(RdmError::EmptyDatabase);
        }
        if query.dim() != self.dim {
            return Err(RdmError::contract(format!(
                "query dim {} != database dim {}",
                query.dim(),
                self.dim
            )));
        }
        Ok(1.0 / query.norm())
    }

    /// Cosine similarity between a query and record `i`, as used by every
    /// search path.
    #[inline]
    pub(super) fn similarity(&self, q: &[f32], q_inv_norm: f64, v: &[f32], i: usize) -> f64 {
        (dot_f32(q, v) * q_inv_norm * self.inv_norms[i]).clamp(-1.0, 1.0)
    }

    #[inline]
    pub(super) fn candidate(&self, q: &[f32], q_inv: f64, v: &[f32], i: usize) -> Candidate {
        Candidate {
            sim: self.similarity(q, q_inv, v, i),
            rank: self.id_rank[i],
            idx: i as u32,
        }
    }

    pub(super) fn finish(&self, query: &Embedding, k: usize, top: TopK) -> Neighbors {
        let hits: Vec<Neighbor> = top
            .into_sorted()
            .into_iter()
            .map(|c| Neighbor {
                id: self.ids[c.idx as usize].clone(),
                index: c.idx as usize,
                similarity: c.sim,
            })
            .collect();
        Neighbors {
            truncated: hits.len() < k,
            hits,
            query: query.clone(),
            k,
        }
    }

    /// Exact top-`k` by cosine similarity over every record.
    pub fn search_exact(&self, query: &Embedding, k: usize) -> Result<Neighbors> {
        let q_inv = self.check_query(query, k)?;
        let q = query.as_slice();
        let mut top = TopK::new(k);
        for (i, v) in self.vectors.chunks_exact(self.dim).enumerate() {
            top.offer(self.candidate(q, q_inv, v, i));
        }
        Ok(self.finish(query, k, top))
    }

    /// [`VectorDatabase::search_exact`] for many queries.
    pub fn search_exact_batch(
        &self,
        queries: &[Embedding],
        k: usize,
        exec: Exec,
    ) -> Result<Vec<Neighbors>> {
        exec.map(queries.len(), |i| self.search_exact(&queries[i], k))
            .into_iter()
            .collect()
    }

    /// Uses the IVF index when present (probing `n_probe` lists), exact
    /// search otherwise.
    pub fn search(&self, query: &Embedding, k: usize, n_probe: usize) -> Result<Neighbors> {
        match &self.index {
            Some(ix) => self.search_ann(query, k, n_probe.clamp(1, ix.n_list())),
            None => self.search_exact(query, k),
        }
    }
}
