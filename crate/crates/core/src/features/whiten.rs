//! Feature whitening: centre the vectors, rotate onto the eigenbasis of the
//! sample covariance and rescale each kept direction to unit variance.

use nalgebra::{DMatrix, SymmetricEigen};

use super::EmbeddingMatrix;
use crate::error::{Error, Result};

/// Relative eigenvalue floor below which a direction counts as zero-variance.
const RANK_TOLERANCE: f64 = 1e-10;

/// A fitted whitening map `x -> (x - mean) * transform`.
#[derive(Debug, Clone)]
pub struct Whitening {
    mean: Vec<f64>,
    /// `input_dim x kept` column-major.
    transform: DMatrix<f64>,
    rank: usize,
}

impl Whitening {
    /// Fits the map keeping the `keep_dim` highest-variance directions.
    pub fn fit(x: &EmbeddingMatrix, keep_dim: usize) -> Result<Self> {
        let fitted = Self::fit_up_to(x, keep_dim)?;
        if fitted.output_dim() < keep_dim {
            return Err(Error::InvalidArgument(format!(
                "cannot keep {keep_dim} whitened dimensions: covariance rank is {}",
                fitted.rank
            )));
        }
        Ok(fitted)
    }

    /// Like [`fit`](Self::fit) but keeps `min(keep_dim, rank)` directions.
    pub fn fit_up_to(x: &EmbeddingMatrix, keep_dim: usize) -> Result<Self> {
        let n = x.rows();
        let d = x.dim();
        if keep_dim == 0 {
            return Err(Error::InvalidArgument("keep_dim must be at least 1".into()));
        }
        if n < 2 {
            return Err(Error::InvalidArgument(format!("whitening needs at least 2 vectors, got {n}")));
        }
        if n < keep_dim {
            return Err(Error::InvalidArgument(format!(
                "keep_dim {keep_dim} exceeds the number of vectors {n}"
            )));
        }

        let mut mean = vec![0.0; d];
        for row in x.iter_rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let centered = DMatrix::from_fn(n, d, |i, j| x.row(i)[j] - mean[j]);
        let scale = 1.0 / (n as f64 - 1.0);

        // Eigenpairs of the covariance, largest first, as (value, unit vector in input space).
        let mut pairs: Vec<(f64, nalgebra::DVector<f64>)> = if d <= n {
            let cov = centered.transpose() * &centered * scale;
            let eig = SymmetricEigen::new(cov);
            (0..d)
                .map(|k| (eig.eigenvalues[k], eig.eigenvectors.column(k).into_owned()))
                .collect()
        } else {
            // Fewer samples than dimensions: decompose the n x n Gram matrix instead.
            let gram = &centered * centered.transpose() * scale;
            let eig = SymmetricEigen::new(gram);
            (0..n)
                .map(|k| {
                    let lambda = eig.eigenvalues[k];
                    let mut u = centered.transpose() * eig.eigenvectors.column(k);
                    let norm = u.norm();
                    if norm > 0.0 {
                        u /= norm;
                    }
                    (lambda, u)
                })
                .collect()
        };
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0));

        let largest = pairs.first().map_or(0.0, |p| p.0).max(0.0);
        let rank = pairs
            .iter()
            .take_while(|(l, _)| *l > largest * RANK_TOLERANCE && *l > 0.0)
            .count();
        if rank < d {
            log::warn!("whitening: covariance has rank {rank} < {d}; dropping zero-variance directions");
        }
        let kept = keep_dim.min(rank);
        if kept == 0 {
            return Err(Error::InvalidArgument("all input vectors are identical".into()));
        }
        let mut transform = DMatrix::zeros(d, kept);
        for (k, (lambda, u)) in pairs.iter().take(kept).enumerate() {
            transform.set_column(k, &(u / lambda.sqrt()));
        }
        Ok(Self { mean, transform, rank })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn output_dim(&self) -> usize {
        self.transform.ncols()
    }

    pub fn apply(&self, x: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
        if x.dim() != self.mean.len() {
            return Err(Error::InvalidArgument(format!(
                "whitening fitted on dim {}, applied to dim {}",
                self.mean.len(),
                x.dim()
            )));
        }
        let k = self.output_dim();
        let mut out = Vec::with_capacity(x.rows() * k);
        for row in x.iter_rows() {
            for c in 0..k {
                let col = self.transform.column(c);
                out.push(
                    row.iter()
                        .zip(&self.mean)
                        .zip(col.iter())
                        .map(|((v, m), w)| (v - m) * w)
                        .sum(),
                );
            }
        }
        EmbeddingMatrix::new(x.rows(), k, out)
    }
}

/// Whitens `x` and truncates to `keep_dim` dimensions.
pub fn whiten(x: &EmbeddingMatrix, keep_dim: usize) -> Result<EmbeddingMatrix> {
    Whitening::fit(x, keep_dim)?.apply(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn covariance(m: &EmbeddingMatrix) -> Vec<Vec<f64>> {
        let n = m.rows() as f64;
        let d = m.dim();
        let mean: Vec<f64> = (0..d).map(|j| m.iter_rows().map(|r| r[j]).sum::<f64>() / n).collect();
        (0..d)
            .map(|a| {
                (0..d)
                    .map(|b| m.iter_rows().map(|r| (r[a] - mean[a]) * (r[b] - mean[b])).sum::<f64>() / (n - 1.0))
                    .collect()
            })
            .collect()
    }

    fn random(n: usize, d: usize, seed: u64) -> EmbeddingMatrix {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        // Correlated columns so the rotation matters.
        let base: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let rows: Vec<Vec<f64>> = base
            .iter()
            .map(|r| (0..d).map(|j| r[j] * (1.0 + j as f64) + 0.5 * r[(j + 1) % d] + 3.0).collect())
            .collect();
        EmbeddingMatrix::from_rows(&rows).unwrap()
    }

    #[test]
    fn symmetric_pair_centres_to_zero() {
        let x = EmbeddingMatrix::from_rows(&[vec![1.0, 2.0], vec![-1.0, -2.0]]).unwrap();
        let w = whiten(&x, 1).unwrap();
        let mean: f64 = w.iter_rows().map(|r| r[0]).sum::<f64>() / 2.0;
        assert!(mean.abs() < 1e-12);
    }

    #[test]
    fn covariance_is_identity_when_tall() {
        let x = random(120, 8, 1);
        let w = whiten(&x, 8).unwrap();
        for (a, row) in covariance(&w).iter().enumerate() {
            for (b, v) in row.iter().enumerate() {
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((v - want).abs() < 1e-9, "cov[{a}][{b}] = {v}");
            }
        }
    }

    #[test]
    fn covariance_is_identity_when_wide() {
        let x = random(40, 100, 2);
        let w = whiten(&x, 16).unwrap();
        assert_eq!(w.dim(), 16);
        for (a, row) in covariance(&w).iter().enumerate() {
            for (b, v) in row.iter().enumerate() {
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((v - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rank_deficiency() {
        // Third column is a copy of the first: rank 2.
        let rows: Vec<Vec<f64>> = (0..10).map(|i| {
            let a = (i as f64).sin();
            let b = (i as f64 * 0.7).cos();
            vec![a, b, a]
        }).collect();
        let x = EmbeddingMatrix::from_rows(&rows).unwrap();
        assert_eq!(Whitening::fit_up_to(&x, 3).unwrap().output_dim(), 2);
        assert!(matches!(whiten(&x, 3), Err(Error::InvalidArgument(_))));
    }
}
