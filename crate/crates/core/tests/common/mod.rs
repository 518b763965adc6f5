//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use chatea::features::{EmbeddingMatrix, FusionModel, LossDistance, MarginObjective, Triple, Views};
use chatea::kg::{EntityId, Fact, KnowledgeGraph, RelationId, Timestamp};
use chatea::llm::{BackendError, ChatBackend, ChatReply, ChatRequest};

pub const MONARCH: EntityId = EntityId(7497);
pub const MONARCHY: EntityId = EntityId(23393);

pub const MONARCH_DESCRIPTION: &str = "The British Monarch is the head of the monarchy of the United Kingdom, currently held by Queen Elizabeth II, who has reigned since 1952 and has made various visits to countries such as the United States, South Korea, and Lithuania, among others, while also hosting visits from foreign leaders and dignitaries.";
pub const MONARCHY_DESCRIPTION: &str = "The Monarchy of the United Kingdom is the constitutional monarchy that serves as the head of state of the United Kingdom, with the monarch appointed by the Governor of Hong Kong and holding various roles such as the Lord Chancellor, Master of the Rolls, and Lord President of the Council.";

pub fn fixture(name: &str) -> String {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn ts(s: &str) -> Timestamp {
    s.parse().expect("timestamp literal")
}

fn fact(h: u64, r: u64, t: u64, start: &str, end: &str) -> Fact {
    Fact::new(EntityId(h), RelationId(r), EntityId(t)).with_times(ts(start), ts(end))
}

/// The British Monarch case as two small graphs. The monarch's neighbours
/// each get one more fact so every counterpart has degree two and the
/// card lists the tuples in file order.
pub fn case_graphs() -> (KnowledgeGraph, KnowledgeGraph) {
    let names1 = [
        (7497, "British Monarch"),
        (1, "Ireland"),
        (2, "Elizabeth II"),
        (3, "United States"),
        (4, "South Korea"),
        (5, "Lithuania"),
        (6, "Japan"),
        (7, "France"),
    ];
    let kg1 = KnowledgeGraph::new(
        "triples_1",
        names1.iter().map(|&(i, n)| (EntityId(i), n.to_string())).collect(),
        vec![(RelationId(0), "Host a visit".into()), (RelationId(1), "Make a visit".into())],
        vec![
            fact(1, 0, 7497, "2011-03", "2011-03"),
            fact(7497, 0, 2, "2011-05", "2011-05"),
            fact(7497, 1, 3, "2007-05", "2007-05"),
            fact(7497, 1, 4, "1999-04", "1999-04"),
            fact(2, 1, 7497, "2011-05", "2011-05"),
            fact(1, 1, 5, "2012-02", "2012-02"),
            fact(3, 1, 6, "2014-04", "2014-04"),
            fact(4, 0, 7, "2015-09", "2015-09"),
        ],
    )
    .expect("case graph 1");

    let names2 = [
        (23393, "Monarchy_of_the_United_Kingdom"),
        (23394, "United_Kingdom"),
        (23395, "Governor_of_Hong_Kong"),
        (23396, "Constitutional_monarchy"),
        (23397, "Chancellor_of_the_Duchy_of_Lancaster"),
        (23398, "Deputy_Prime_Minister_of_the_United_Kingdom"),
        (23399, "Elizabeth_II"),
    ];
    let kg2 = KnowledgeGraph::new(
        "triples_2",
        names2.iter().map(|&(i, n)| (EntityId(i), n.to_string())).collect(),
        vec![
            (RelationId(0), "country".into()),
            (RelationId(1), "appointed by".into()),
            (RelationId(2), "instance of".into()),
        ],
        vec![
            fact(23393, 0, 23394, "~", "~"),
            fact(23395, 1, 23393, "~", "~"),
            fact(23393, 2, 23396, "~", "~"),
            fact(23397, 1, 23393, "~", "~"),
            fact(23398, 1, 23393, "~", "~"),
        ],
    )
    .expect("case graph 2");
    (kg1, kg2)
}

/// Records every request and answers from a caller-supplied function.
pub struct CaptureBackend<F> {
    pub requests: Mutex<Vec<ChatRequest>>,
    answer: F,
}

impl<F: Fn(&ChatRequest) -> String + Send + Sync> CaptureBackend<F> {
    pub fn new(answer: F) -> Self {
        Self {
            requests: Mutex::new(Vec::new()),
            answer,
        }
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.requests.lock().unwrap().clone()
    }
}

impl<F: Fn(&ChatRequest) -> String + Send + Sync> ChatBackend for CaptureBackend<F> {
    fn model_id(&self) -> &str {
        "capture"
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatReply, BackendError> {
        self.requests.lock().unwrap().push(request.clone());
        Ok(ChatReply::estimated(request, (self.answer)(request), 0))
    }
}

/// CSLS by the definition for every source row: all cosines computed
/// directly, radii as the mean of the `k` largest cosines, each ranking
/// sorted by score with ties broken by ascending row.
pub fn brute_force_csls_all(src: &[Vec<f64>], tgt: &[Vec<f64>], k: usize) -> Vec<Vec<(usize, f64)>> {
    let cos = |a: &[f64], b: &[f64]| {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            0.0
        } else {
            dot / (na * nb)
        }
    };
    let sims: Vec<Vec<f64>> = src.iter().map(|x| tgt.iter().map(|y| cos(x, y)).collect()).collect();
    let mean_top_k = |mut c: Vec<f64>| {
        c.sort_by(|a, b| b.total_cmp(a));
        c[..k].iter().sum::<f64>() / k as f64
    };
    let r_src: Vec<f64> = sims.iter().map(|row| mean_top_k(row.clone())).collect();
    let r_tgt: Vec<f64> = (0..tgt.len())
        .map(|j| mean_top_k(sims.iter().map(|row| row[j]).collect()))
        .collect();
    sims.iter()
        .enumerate()
        .map(|(i, row)| {
            let mut out: Vec<(usize, f64)> = row
                .iter()
                .enumerate()
                .map(|(j, c)| (j, 2.0 * c - r_src[i] - r_tgt[j]))
                .collect();
            out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            out
        })
        .collect()
}

pub fn brute_force_csls(src: &[Vec<f64>], tgt: &[Vec<f64>], k: usize, row: usize) -> Vec<(usize, f64)> {
    brute_force_csls_all(src, tgt, k).swap_remove(row)
}

/// Unbiased sample covariance of the rows.
pub fn covariance(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = rows.len() as f64;
    let d = rows[0].len();
    let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    (0..d)
        .map(|a| {
            (0..d)
                .map(|b| rows.iter().map(|r| (r[a] - mean[a]) * (r[b] - mean[b])).sum::<f64>() / (n - 1.0))
                .collect()
        })
        .collect()
}

/// Central difference of `f` along coordinate `i` of `x`.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut plus = x.to_vec();
    let mut minus = x.to_vec();
    plus[i] += h;
    minus[i] -= h;
    (f(&plus) - f(&minus)) / (2.0 * h)
}

/// Candidate lists with each target's gold placed at a chosen 1-based
/// rank; the other slots hold non-gold rows in a target-dependent order.
pub fn candidates_with_gold_at(
    kg1: &KnowledgeGraph,
    kg2: &KnowledgeGraph,
    gold: &[(EntityId, EntityId)],
    rank: impl Fn(EntityId) -> usize,
    len: usize,
) -> chatea::align::StaticCandidates {
    use chatea::features::Candidate;
    let mut rows = vec![Vec::new(); kg1.entity_count()];
    let n2 = kg2.entity_count();
    for &(a, b) in gold {
        let src = kg1.index_of(a).unwrap();
        let g = kg2.index_of(b).unwrap();
        let mut order: Vec<usize> = (0..n2).collect();
        order.rotate_left((src * 5) % n2.max(1));
        order.retain(|&r| r != g);
        let at = rank(a) - 1;
        order.insert(at.min(order.len()), g);
        order.truncate(len);
        rows[src] = order
            .into_iter()
            .enumerate()
            .map(|(pos, row)| Candidate {
                row,
                score: 1.0 - pos as f64 * 0.01,
            })
            .collect();
    }
    chatea::align::StaticCandidates(rows)
}

pub fn gaussian_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

pub fn matrix(rows: &[Vec<f64>]) -> EmbeddingMatrix {
    EmbeddingMatrix::from_rows(rows).unwrap()
}

fn random_views(rng: &mut ChaCha8Rng, n: usize, dims: [usize; 3]) -> Views {
    Views {
        name: matrix(&gaussian_rows(rng, n, dims[0])),
        time: matrix(&gaussian_rows(rng, n, dims[1])),
        structure: matrix(&gaussian_rows(rng, n, dims[2])),
    }
}

/// Norm-wise relative error between the analytic margin-loss gradient and
/// central differences, at a random perturbation of the identity model.
pub fn gradient_error(seed: u64, distance: LossDistance) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = [4, 3, 5];
    let (left, right) = (random_views(&mut rng, 12, dims), random_views(&mut rng, 14, dims));
    let triples: Vec<Triple> = (0..20)
        .map(|_| Triple {
            src: rng.random_range(0..12),
            pos: rng.random_range(0..14),
            neg: rng.random_range(0..14),
        })
        .collect();
    let objective = MarginObjective {
        left: &left,
        right: &right,
        triples: &triples,
        margin: 1.5,
        distance,
        csls_k: 3,
    };
    let mut model = FusionModel::identity(dims, [3, 2, 3]);
    for w in model.weights_mut() {
        *w += rng.random_range(-0.5..0.5);
    }
    let (_, analytic) = objective.loss_and_grad(&model);
    let numeric: Vec<f64> = (0..analytic.len())
        .map(|i| {
            let f = |w: &[f64]| {
                let mut m = model.clone();
                m.weights_mut().copy_from_slice(w);
                objective.loss(&m)
            };
            central_difference(f, model.weights(), i, 1e-6)
        })
        .collect();
    let diff = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let scale = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / scale(&analytic).max(scale(&numeric)).max(1e-12)
}
