//! Cross-domain similarity local scaling.
//!
//! `csls(x, y) = 2 cos(x, y) - r_tgt(x) - r_src(y)`, where `r_tgt(x)` is the
//! mean cosine between `x` and its `k` nearest targets and `r_src(y)` the mean
//! cosine between `y` and its `k` nearest sources.

use serde::{Deserialize, Serialize};

use super::EmbeddingMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CslsConfig {
    pub neighborhood_k: usize,
}

impl Default for CslsConfig {
    fn default() -> Self {
        Self { neighborhood_k: 10 }
    }
}

/// One retrieved target row with its CSLS score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub row: usize,
    pub score: f64,
}

pub(crate) fn normalized_rows(m: &EmbeddingMatrix) -> (Vec<f64>, usize) {
    let dim = m.dim();
    let mut out = Vec::with_capacity(m.rows() * dim);
    let mut zero = 0;
    for row in m.iter_rows() {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            out.extend(row.iter().map(|v| v / norm));
        } else {
            zero += 1;
            out.extend(std::iter::repeat_n(0.0, dim));
        }
    }
    (out, zero)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Keeps the `k` largest values seen.
#[derive(Clone)]
struct TopK {
    values: Vec<f64>,
    k: usize,
}

impl TopK {
    fn new(k: usize) -> Self {
        Self {
            values: Vec::with_capacity(k + 1),
            k,
        }
    }

    fn push(&mut self, v: f64) {
        if self.values.len() < self.k {
            self.values.push(v);
            if self.values.len() == self.k {
                self.values.sort_by(|a, b| b.total_cmp(a));
            }
        } else if v > self.values[self.k - 1] {
            let pos = self.values.partition_point(|x| *x >= v);
            self.values.insert(pos, v);
            self.values.pop();
        }
    }

    fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.k as f64
    }
}

/// Precomputed neighbourhood radii for repeated CSLS queries.
#[derive(Debug, Clone)]
pub struct CslsIndex {
    dim: usize,
    src: Vec<f64>,
    tgt: Vec<f64>,
    n_src: usize,
    n_tgt: usize,
    /// Mean cosine of each source to its k nearest targets.
    r_tgt: Vec<f64>,
    /// Mean cosine of each target to its k nearest sources.
    r_src: Vec<f64>,
}

impl CslsIndex {
    pub fn new(src: &EmbeddingMatrix, tgt: &EmbeddingMatrix, cfg: &CslsConfig) -> Result<Self> {
        if src.dim() != tgt.dim() {
            return Err(Error::InvalidArgument(format!(
                "source dim {} differs from target dim {}",
                src.dim(),
                tgt.dim()
            )));
        }
        let k = cfg.neighborhood_k;
        if k == 0 || k >= tgt.rows() || k > src.rows() {
            return Err(Error::InvalidArgument(format!(
                "CSLS k = {k} must satisfy 1 <= k < {} targets and k <= {} sources",
                tgt.rows(),
                src.rows()
            )));
        }
        let dim = src.dim();
        let (s, zs) = normalized_rows(src);
        let (t, zt) = normalized_rows(tgt);
        if zs + zt > 0 {
            log::warn!("CSLS: {} zero-norm vectors; their cosines are 0", zs + zt);
        }
        let n_src = src.rows();
        let n_tgt = tgt.rows();
        let mut r_tgt = Vec::with_capacity(n_src);
        let mut near_src = vec![TopK::new(k); n_tgt];
        for i in 0..n_src {
            let x = &s[i * dim..(i + 1) * dim];
            let mut near_tgt = TopK::new(k);
            for (j, acc) in near_src.iter_mut().enumerate() {
                let c = dot(x, &t[j * dim..(j + 1) * dim]);
                near_tgt.push(c);
                acc.push(c);
            }
            r_tgt.push(near_tgt.mean());
        }
        let r_src = near_src.iter().map(TopK::mean).collect();
        Ok(Self {
            dim,
            src: s,
            tgt: t,
            n_src,
            n_tgt,
            r_tgt,
            r_src,
        })
    }

    pub fn source_count(&self) -> usize {
        self.n_src
    }

    pub fn target_count(&self) -> usize {
        self.n_tgt
    }

    pub fn cosine(&self, src_row: usize, tgt_row: usize) -> f64 {
        dot(
            &self.src[src_row * self.dim..(src_row + 1) * self.dim],
            &self.tgt[tgt_row * self.dim..(tgt_row + 1) * self.dim],
        )
    }

    pub fn score(&self, src_row: usize, tgt_row: usize) -> f64 {
        2.0 * self.cosine(src_row, tgt_row) - self.r_tgt[src_row] - self.r_src[tgt_row]
    }

    /// All targets, best first; equal scores fall back to ascending row.
    pub fn ranked(&self, src_row: usize) -> Vec<Candidate> {
        let mut all: Vec<Candidate> = (0..self.n_tgt)
            .map(|row| Candidate {
                row,
                score: self.score(src_row, row),
            })
            .collect();
        all.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.row.cmp(&b.row)));
        all
    }

    pub fn top(&self, src_row: usize, scope: usize) -> Vec<Candidate> {
        let mut all = self.ranked(src_row);
        all.truncate(scope);
        all
    }
}

/// The `scope` best targets for one source row.
pub fn csls_topk(
    src: &EmbeddingMatrix,
    tgt: &EmbeddingMatrix,
    query_row: usize,
    scope: usize,
    cfg: &CslsConfig,
) -> Result<Vec<Candidate>> {
    if scope == 0 {
        return Err(Error::InvalidArgument("scope must be at least 1".into()));
    }
    if query_row >= src.rows() {
        return Err(Error::InvalidArgument(format!("query row {query_row} out of range")));
    }
    Ok(CslsIndex::new(src, tgt, cfg)?.top(query_row, scope))
}
