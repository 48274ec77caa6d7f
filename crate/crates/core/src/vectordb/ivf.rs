use std::io::Read;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::search::TopK;
use super::{Neighbors, VectorDatabase};
use crate::binio::{put_f32s, put_u32, put_u64, ByteReader};
use crate::embedding::{dot_f32, Embedding};
use crate::error::{RdmError, Result};
use crate::exec::Exec;

pub const INDEX_MAGIC: &[u8; 4] = b"RDMI";
const VERSION: u32 = 1;
const ASSIGN_CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IvfParams {
    pub n_list: usize,
    pub iterations: usize,
    pub seed: u64,
    /// k-means trains on at most `n_list × train_cap_per_list` records.
    pub train_cap_per_list: usize,
}

impl IvfParams {
    pub fn new(n_list: usize, seed: u64) -> Self {
        Self {
            n_list,
            iterations: 20,
            seed,
            train_cap_per_list: 256,
        }
    }
}

/// Inverted-file partition of a database: spherical k-means centroids and
/// one list of record positions per centroid.
#[derive(Debug, Clone, PartialEq)]
pub struct IvfIndex {
    params: IvfParams,
    dim: usize,
    /// `n_list × dim`, unit rows.
    centroids: Vec<f32>,
    lists: Vec<Vec<u32>>,
    /// Per-list contiguous copies of member vectors, in list order.
    packed: Vec<Vec<f32>>,
}

impl IvfIndex {
    pub fn params(&self) -> &IvfParams {
        &self.params
    }

    pub fn n_list(&self) -> usize {
        self.lists.len()
    }

    pub fn centroids(&self) -> &[f32] {
        &self.centroids
    }

    pub fn centroid(&self, c: usize) -> &[f32] {
        &self.centroids[c * self.dim..(c + 1) * self.dim]
    }

    /// Record positions assigned to each centroid.
    pub fn lists(&self) -> &[Vec<u32>] {
        &self.lists
    }

    /// Centroids ranked by similarity to `q` (ties by lower index).
    pub fn nearest_lists(&self, q: &[f32], n: usize) -> Vec<usize> {
        let mut sims: Vec<(f64, usize)> = (0..self.n_list())
            .map(|c| (dot_f32(q, self.centroid(c)), c))
            .collect();
        sims.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        sims.into_iter().take(n).map(|(_, c)| c).collect()
    }

    fn pack(&mut self, db_vectors: &[f32]) {
        let dim = self.dim;
        self.packed = self
            .lists
            .iter()
            .map(|list| {
                let mut out = Vec::with_capacity(list.len() * dim);
                for &i in list {
                    let i = i as usize;
                    out.extend_from_slice(&db_vectors[i * dim..(i + 1) * dim]);
                }
                out
            })
            .collect();
    }

    pub(crate) fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(INDEX_MAGIC);
        put_u32(&mut out, VERSION);
        put_u32(&mut out, self.n_list() as u32);
        put_u32(&mut out, self.dim as u32);
        put_u32(&mut out, self.params.iterations as u32);
        put_u64(&mut out, self.params.seed);
        put_u32(&mut out, self.params.train_cap_per_list as u32);
        put_f32s(&mut out, self.centroids.iter().copied());
        for list in &self.lists {
            put_u32(&mut out, list.len() as u32);
            for &i in list {
                put_u32(&mut out, i);
            }
        }
        out
    }

    /// Decodes an index and checks that it partitions `0..count`.
    pub(crate) fn from_reader<R: Read>(
        reader: R,
        file: &str,
        dim: usize,
        db_vectors: &[f32],
    ) -> Result<Self> {
        let count = db_vectors.len() / dim.max(1);
        let mut r = ByteReader::new(reader, file);
        r.magic(INDEX_MAGIC)?;
        let version = r.u32()?;
        if version != VERSION {
            return Err(r.error(format!("unsupported version {version}")));
        }
        let n_list = r.u32()? as usize;
        if n_list == 0 || n_list > count {
            return Err(r.error(format!("n_list {n_list} invalid for {count} records")));
        }
        let file_dim = r.u32()? as usize;
        if file_dim != dim {
            return Err(r.error(format!("index dim {file_dim} != database dim {dim}")));
        }
        let iterations = r.u32()? as usize;
        let seed = r.u64()?;
        let train_cap_per_list = r.u32()? as usize;
        let centroids = r.f32s(n_list * dim)?;
        if centroids.iter().any(|x| !x.is_finite()) {
            return Err(r.error("non-finite centroid"));
        }
        let mut seen = vec![false; count];
        let mut lists = Vec::with_capacity(n_list);
        for _ in 0..n_list {
            let len = r.u32()? as usize;
            if len > count {
                return Err(r.error(format!("list length {len} exceeds record count")));
            }
            let mut list = Vec::with_capacity(len);
            for _ in 0..len {
                let i = r.u32()?;
                match seen.get_mut(i as usize) {
                    Some(s) if !*s => *s = true,
                    Some(_) => return Err(r.error(format!("record {i} listed twice"))),
                    None => return Err(r.error(format!("record {i} out of range"))),
                }
                list.push(i);
            }
            lists.push(list);
        }
        r.expect_eof()?;
        if seen.iter().any(|s| !s) {
            return Err(RdmError::Format {
                file: file.to_string(),
                offset: 0,
                reason: "index does not cover every record".into(),
            });
        }
        let mut ix = Self {
            params: IvfParams {
                n_list,
                iterations,
                seed,
                train_cap_per_list,
            },
            dim,
            centroids,
            lists,
            packed: Vec::new(),
        };
        ix.pack(db_vectors);
        Ok(ix)
    }
}

/// Best centroid for `v`; ties go to the lower index.
fn assign(v: &[f32], centroids: &[f32], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (c, cv) in centroids.chunks_exact(dim).enumerate() {
        let s = dot_f32(v, cv);
        if s > best.1 {
            best = (c, s);
        }
    }
    best
}

fn unit_f32(v: &[f64]) -> Option<Vec<f32>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    (n > 0.0 && n.is_finite()).then(|| v.iter().map(|x| (x / n) as f32).collect())
}

/// Seeded k-means++ over the rows of `data`.
fn seed_centroids(data: &[f32], dim: usize, n_list: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let m = data.len() / dim;
    let row = |i: usize| &data[i * dim..(i + 1) * dim];
    let first = rng.random_range(0..m);
    let mut centroids = row(first).to_vec();
    let mut chosen = vec![false; m];
    chosen[first] = true;
    let mut d2: Vec<f64> = (0..m)
        .map(|i| (2.0 - 2.0 * dot_f32(row(i), row(first))).max(0.0))
        .collect();
    while centroids.len() < n_list * dim {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = m - 1;
            for (i, &d) in d2.iter().enumerate() {
                if u < d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        } else {
            // Fewer distinct rows than lists: reuse the lowest unchosen row.
            chosen.iter().position(|c| !c).unwrap_or(0)
        };
        chosen[pick] = true;
        let c = row(pick).to_vec();
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min((2.0 - 2.0 * dot_f32(row(i), &c)).max(0.0));
        }
        centroids.extend_from_slice(&c);
    }
    centroids
}

fn lloyd(data: &[f32], dim: usize, mut centroids: Vec<f32>, iterations: usize, exec: Exec) -> Vec<f32> {
    let n_list = centroids.len() / dim;
    let m = data.len() / dim;
    for _ in 0..iterations {
        let assigned = assign_all(data, dim, &centroids, exec);
        let mut sums = vec![0.0f64; n_list * dim];
        let mut counts = vec![0usize; n_list];
        for (i, &(c, _)) in assigned.iter().enumerate() {
            counts[c] += 1;
            for (s, &x) in sums[c * dim..(c + 1) * dim]
                .iter_mut()
                .zip(&data[i * dim..(i + 1) * dim])
            {
                *s += x as f64;
            }
        }
        // Empty lists take the rows that fit their centroid worst.
        let mut by_fit: Vec<usize> = (0..m).collect();
        by_fit.sort_by(|&a, &b| assigned[a].1.total_cmp(&assigned[b].1).then(a.cmp(&b)));
        let mut spare = by_fit.into_iter();
        for c in 0..n_list {
            let new = if counts[c] == 0 {
                spare.next().map(|i| data[i * dim..(i + 1) * dim].to_vec())
            } else {
                unit_f32(&sums[c * dim..(c + 1) * dim])
            };
            if let Some(new) = new {
                centroids[c * dim..(c + 1) * dim].copy_from_slice(&new);
            }
        }
    }
    centroids
}

fn assign_all(data: &[f32], dim: usize, centroids: &[f32], exec: Exec) -> Vec<(usize, f64)> {
    let n = data.len() / dim;
    exec.map_chunks(n, ASSIGN_CHUNK, |_, range| {
        range
            .map(|i| assign(&data[i * dim..(i + 1) * dim], centroids, dim))
            .collect::<Vec<_>>()
    })
    .into_iter()
    .flatten()
    .collect()
}

impl VectorDatabase {
    /// Partitions the records with seeded spherical k-means and returns the
    /// database with the index attached.
    pub fn with_index(mut self, params: IvfParams, exec: Exec) -> Result<Self> {
        let n = self.len();
        if params.n_list == 0 || params.n_list > n {
            return Err(RdmError::contract(format!(
                "n_list must be in 1..={n}, got {}",
                params.n_list
            )));
        }
        if params.train_cap_per_list == 0 {
            return Err(RdmError::contract("train_cap_per_list must be positive"));
        }
        let dim = self.dim;
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let cap = params.n_list.saturating_mul(params.train_cap_per_list);
        let train: Vec<f32> = if n <= cap {
            self.vectors.clone()
        } else {
            let mut rows = rand::seq::index::sample(&mut rng, n, cap).into_vec();
            rows.sort_unstable();
            rows.iter()
                .flat_map(|&i| self.vector(i).iter().copied())
                .collect()
        };
        let init = seed_centroids(&train, dim, params.n_list, &mut rng);
        let centroids = lloyd(&train, dim, init, params.iterations, exec);
        let mut lists = vec![Vec::new(); params.n_list];
        for (i, (c, _)) in assign_all(&self.vectors, dim, &centroids, exec)
            .into_iter()
            .enumerate()
        {
            lists[c].push(i as u32);
        }
        let mut ix = IvfIndex {
            params,
            dim,
            centroids,
            lists,
            packed: Vec::new(),
        };
        ix.pack(&self.vectors);
        log::debug!(
            "built IVF index on {}: {} lists over {n} records",
            self.name,
            params.n_list
        );
        self.index = Some(ix);
        Ok(self)
    }

    pub fn without_index(mut self) -> Self {
        self.index = None;
        self
    }

    pub(super) fn attach_index(&mut self, ix: IvfIndex) {
        self.index = Some(ix);
    }

    /// Exact search restricted to the `n_probe` lists nearest the query.
    pub fn search_ann(&self, query: &Embedding, k: usize, n_probe: usize) -> Result<Neighbors> {
        let ix = self
            .index
            .as_ref()
            .ok_or_else(|| RdmError::contract(format!("database {} has no index", self.name)))?;
        if n_probe == 0 || n_probe > ix.n_list() {
            return Err(RdmError::contract(format!(
                "n_probe must be in 1..={}, got {n_probe}",
                ix.n_list()
            )));
        }
        let q_inv = self.check_query(query, k)?;
        let q = query.as_slice();
        let mut top = TopK::new(k);
        for l in ix.nearest_lists(q, n_probe) {
            for (v, &i) in ix.packed[l].chunks_exact(self.dim).zip(&ix.lists[l]) {
                top.offer(self.candidate(q, q_inv, v, i as usize));
            }
        }
        Ok(self.finish(query, k, top))
    }

    pub fn search_ann_batch(
        &self,
        queries: &[Embedding],
        k: usize,
        n_probe: usize,
        exec: Exec,
    ) -> Result<Vec<Neighbors>> {
        exec.map(queries.len(), |i| self.search_ann(&queries[i], k, n_probe))
            .into_iter()
            .collect()
    }
}
