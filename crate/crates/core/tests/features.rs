mod common;

use chatea::features::{
    biased_walks, build_views, fuse_and_train, train_skipgram, whiten, CslsConfig, CslsIndex, FeatureConfig,
    LossDistance, TrainConfig, WalkConfig, WalkGraph,
};
use chatea::synthetic::{SyntheticConfig, SyntheticPair};
use common::{brute_force_csls, covariance, gaussian_rows, gradient_error, matrix};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn csls_matches_brute_force(seed in any::<u64>(), n_src in 2usize..40, n_tgt in 3usize..40, d in 1usize..12, k in 1usize..10) {
        let k = k.min(n_tgt - 1).min(n_src);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let src = gaussian_rows(&mut rng, n_src, d);
        let tgt = gaussian_rows(&mut rng, n_tgt, d);
        let index = CslsIndex::new(&matrix(&src), &matrix(&tgt), &CslsConfig { neighborhood_k: k }).unwrap();
        for row in [0, n_src / 2, n_src - 1] {
            let expect = brute_force_csls(&src, &tgt, k, row);
            let got = index.ranked(row);
            prop_assert_eq!(got.len(), expect.len());
            for (g, (j, s)) in got.iter().zip(&expect) {
                prop_assert_eq!(g.row, *j);
                prop_assert!((g.score - s).abs() <= 1e-9, "row {} target {}: {} vs {}", row, j, g.score, s);
            }
        }
    }

    #[test]
    fn whitened_covariance_is_identity(seed in any::<u64>(), d in 1usize..10, extra in 0usize..30) {
        let n = 4 * d + extra + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Correlated inputs: a random mixing of independent columns.
        let base = gaussian_rows(&mut rng, n, d);
        let mix = gaussian_rows(&mut rng, d, d);
        let rows: Vec<Vec<f64>> = base
            .iter()
            .map(|r| (0..d).map(|j| (0..d).map(|i| r[i] * mix[i][j]).sum::<f64>() + 3.0).collect())
            .collect();
        let out = whiten(&matrix(&rows), d).unwrap();
        let out_rows: Vec<Vec<f64>> = out.iter_rows().map(<[f64]>::to_vec).collect();
        let cov = covariance(&out_rows);
        for (a, row) in cov.iter().enumerate() {
            for (b, v) in row.iter().enumerate() {
                let expect = if a == b { 1.0 } else { 0.0 };
                prop_assert!((v - expect).abs() <= 1e-6, "cov[{}][{}] = {}", a, b, v);
            }
        }
    }
}

#[test]
fn margin_gradients_match_finite_differences() {
    for seed in 0..10 {
        for distance in [LossDistance::Euclidean, LossDistance::Csls] {
            let err = gradient_error(seed, distance);
            assert!(err <= 1e-4, "seed {seed} {distance:?}: relative error {err:e}");
        }
    }
}

#[test]
fn walks_and_skipgram_are_reproducible() {
    let g = WalkGraph::from_edges(30, (0..30).map(|i| (i, (i * 7 + 3) % 30)));
    let cfg = WalkConfig {
        epochs: 2,
        ..Default::default()
    };
    let a = biased_walks(&g, &cfg);
    assert_eq!(a, biased_walks(&g, &cfg));
    let e1 = train_skipgram(&a, 30, 8, &cfg).unwrap();
    let e2 = train_skipgram(&a, 30, 8, &cfg).unwrap();
    assert_eq!(e1.as_slice(), e2.as_slice());
    let other = WalkConfig { seed: cfg.seed + 1, ..cfg };
    assert_ne!(a, biased_walks(&g, &other));
}

#[test]
fn fused_width_is_the_sum_of_view_widths_and_training_repeats() {
    let pair = SyntheticPair::generate(&SyntheticConfig {
        entities: 40,
        ..Default::default()
    })
    .unwrap();
    let cfg = FeatureConfig {
        train: TrainConfig {
            epochs: 5,
            hidden_dim: 12,
            time_dim: 6,
            ..Default::default()
        },
        ..Default::default()
    };
    let train = &pair.pairs[..12];
    let (l, r) = build_views(&pair.kg1, &pair.kg2, train, None, &cfg).unwrap();
    let anchors: Vec<(usize, usize)> = train
        .iter()
        .map(|(a, b)| (pair.kg1.index_of(*a).unwrap(), pair.kg2.index_of(*b).unwrap()))
        .collect();
    let f1 = fuse_and_train(&l, &r, &anchors, &cfg.train).unwrap();
    let f2 = fuse_and_train(&l, &r, &anchors, &cfg.train).unwrap();
    assert_eq!(f1.left.dim(), 12 + 6 + 12);
    assert_eq!(f1.model.output_dim(), f1.model.out_dims().iter().sum::<usize>());
    assert_eq!(f1.left.as_slice(), f2.left.as_slice());
    assert_eq!(f1.losses, f2.losses);
}
