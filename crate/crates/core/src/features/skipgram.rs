//! Skip-gram with negative sampling over walk corpora.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};

use super::{EmbeddingMatrix, WalkConfig};
use crate::error::{Error, Result};

fn sigmoid(x: f64) -> f64 {
    if x > 30.0 {
        1.0
    } else if x < -30.0 {
        0.0
    } else {
        1.0 / (1.0 + (-x).exp())
    }
}

/// Trains `dim`-wide node vectors from `corpus` (node ids below `nodes`).
///
/// Negatives are drawn from the unigram distribution raised to 3/4; the
/// learning rate decays linearly. Nodes that never occur get zero rows.
pub fn train_skipgram(corpus: &[Vec<usize>], nodes: usize, dim: usize, cfg: &WalkConfig) -> Result<EmbeddingMatrix> {
    if corpus.is_empty() {
        return Err(Error::InvalidArgument("skip-gram corpus is empty".into()));
    }
    if dim == 0 {
        return Err(Error::InvalidArgument("skip-gram dim must be at least 1".into()));
    }
    let mut counts = vec![0u64; nodes];
    for walk in corpus {
        for &v in walk {
            if v >= nodes {
                return Err(Error::InvalidArgument(format!("corpus node {v} out of range {nodes}")));
            }
            counts[v] += 1;
        }
    }

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5a3d);
    let bound = 0.5 / dim as f64;
    let mut input: Vec<f64> = (0..nodes * dim).map(|_| rng.random_range(-bound..bound)).collect();
    let mut output = vec![0.0; nodes * dim];

    let noise = WeightedIndex::new(counts.iter().map(|&c| (c as f64).powf(0.75)))
        .map_err(|e| Error::InvalidArgument(format!("negative-sampling table: {e}")))?;

    let pairs_per_epoch: usize = corpus
        .iter()
        .map(|w| {
            (0..w.len())
                .map(|i| i.min(cfg.window) + (w.len() - 1 - i).min(cfg.window))
                .sum::<usize>()
        })
        .sum();
    let total = (pairs_per_epoch * cfg.epochs).max(1) as f64;
    let mut step = 0usize;
    let mut grad = vec![0.0; dim];

    for _ in 0..cfg.epochs {
        for walk in corpus {
            for (i, &center) in walk.iter().enumerate() {
                let lo = i.saturating_sub(cfg.window);
                let hi = (i + cfg.window).min(walk.len() - 1);
                for (j, &context) in walk.iter().enumerate().take(hi + 1).skip(lo) {
                    if j == i {
                        continue;
                    }
                    let lr = (cfg.learning_rate * (1.0 - step as f64 / total)).max(cfg.learning_rate * 1e-4);
                    step += 1;
                    grad.iter_mut().for_each(|g| *g = 0.0);
                    let c_in = center * dim;
                    for n in 0..=cfg.negatives {
                        let (target, label) = if n == 0 {
                            (context, 1.0)
                        } else {
                            let t = noise.sample(&mut rng);
                            if t == context {
                                continue;
                            }
                            (t, 0.0)
                        };
                        let t_out = target * dim;
                        let dot: f64 = (0..dim).map(|k| input[c_in + k] * output[t_out + k]).sum();
                        let g = (label - sigmoid(dot)) * lr;
                        for k in 0..dim {
                            grad[k] += g * output[t_out + k];
                            output[t_out + k] += g * input[c_in + k];
                        }
                    }
                    for k in 0..dim {
                        input[c_in + k] += grad[k];
                    }
                }
            }
        }
    }

    let absent = counts.iter().filter(|&&c| c == 0).count();
    if absent > 0 {
        log::warn!("skip-gram: {absent} nodes never occur in the corpus; their rows are zero");
        for (v, _) in counts.iter().enumerate().filter(|(_, &c)| c == 0) {
            input[v * dim..(v + 1) * dim].iter_mut().for_each(|x| *x = 0.0);
        }
    }
    EmbeddingMatrix::new(nodes, dim, input)
}
