//! Time2Vec encoding of fact timestamps: one linear component followed by
//! sinusoidal components.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};

use super::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::kg::{KnowledgeGraph, Timestamp};

#[derive(Debug, Clone, PartialEq)]
pub struct Time2VecParams {
    omega: Vec<f64>,
    phi: Vec<f64>,
}

impl Time2VecParams {
    pub fn new(omega: Vec<f64>, phi: Vec<f64>) -> Result<Self> {
        if omega.len() != phi.len() || omega.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "time2vec needs equal, non-zero frequency/phase lengths (got {} and {})",
                omega.len(),
                phi.len()
            )));
        }
        if omega.iter().chain(&phi).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("time2vec parameters must be finite".into()));
        }
        Ok(Self { omega, phi })
    }

    /// Seeded parameters. The linear component maps year 2000 to 0 at a
    /// decade scale; periodic components have periods log-uniform in
    /// [0.25, 50] years with uniform phases.
    pub fn seeded(dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("time2vec dim must be at least 1".into()));
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut omega = vec![0.1];
        let mut phi = vec![-200.0];
        let (lo, hi) = (0.25f64.ln(), 50f64.ln());
        for _ in 1..dim {
            let period = rng.random_range(lo..hi).exp();
            omega.push(TAU / period);
            phi.push(rng.random_range(0.0..TAU));
        }
        Self::new(omega, phi)
    }

    pub fn dim(&self) -> usize {
        self.omega.len()
    }
}

/// Encodes a scalar time (fractional years).
pub fn time2vec(tau: f64, params: &Time2VecParams) -> Vec<f64> {
    params
        .omega
        .iter()
        .zip(&params.phi)
        .enumerate()
        .map(|(i, (w, p))| {
            let z = w * tau + p;
            if i == 0 {
                z
            } else {
                z.sin()
            }
        })
        .collect()
}

/// Unknown timestamps encode to the zero vector.
pub fn encode_timestamp(ts: Timestamp, params: &Time2VecParams) -> Vec<f64> {
    match ts.fractional_year() {
        Some(tau) => time2vec(tau, params),
        None => vec![0.0; params.dim()],
    }
}

/// Per-entity time view: mean encoding over the known start and end stamps of
/// the entity's incident facts; zero for entities without any.
pub fn entity_time_features(kg: &KnowledgeGraph, params: &Time2VecParams) -> EmbeddingMatrix {
    let dim = params.dim();
    let mut out = EmbeddingMatrix::zeros(kg.entity_count(), dim);
    for row in 0..kg.entity_count() {
        let mut count = 0usize;
        let acc = out.row_mut(row);
        for &fi in kg.incident_by_index(row) {
            let fact = &kg.facts()[fi];
            for ts in [fact.start, fact.end] {
                if let Some(tau) = ts.fractional_year() {
                    for (a, v) in acc.iter_mut().zip(time2vec(tau, params)) {
                        *a += v;
                    }
                    count += 1;
                }
            }
        }
        if count > 0 {
            for a in acc.iter_mut() {
                *a /= count as f64;
            }
        }
    }
    out
}
