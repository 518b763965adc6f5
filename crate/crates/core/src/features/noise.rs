//! Embedding corruption for robustness experiments.

use rand::{Rng, SeedableRng};

use super::EmbeddingMatrix;
use crate::error::{Error, Result};

/// Replaces `floor(ratio * dim)` seeded-chosen dimensions with uniform noise
/// spanning each dimension's observed `[min, max]` range.
pub fn inject_noise(emb: &EmbeddingMatrix, ratio: f64, seed: u64) -> Result<EmbeddingMatrix> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::InvalidArgument(format!("noise ratio {ratio} outside [0, 1]")));
    }
    let dim = emb.dim();
    let count = (ratio * dim as f64).floor() as usize;
    let mut out = emb.clone();
    if count == 0 || emb.rows() == 0 {
        return Ok(out);
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut dims = rand::seq::index::sample(&mut rng, dim, count).into_vec();
    dims.sort_unstable();
    for &j in &dims {
        let (lo, hi) = emb
            .iter_rows()
            .map(|r| r[j])
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        for i in 0..emb.rows() {
            let u: f64 = rng.random();
            out.row_mut(i)[j] = lo + u * (hi - lo);
        }
    }
    Ok(out)
}
