//! Second-order biased random walks over the entity graph.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::kg::{EntityId, KnowledgeGraph};

/// Walk and skip-gram settings for the structure view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WalkConfig {
    pub walks_per_node: usize,
    pub walk_length: usize,
    /// Return bias: weight `1/p` for stepping back to the previous node.
    pub return_bias: f64,
    /// In-out bias: weight `1/q` for moving two hops away from the previous node.
    pub inout_bias: f64,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for WalkConfig {
    fn default() -> Self {
        Self {
            walks_per_node: 10,
            walk_length: 20,
            return_bias: 1.0,
            inout_bias: 1.0,
            window: 5,
            negatives: 5,
            epochs: 5,
            learning_rate: 0.025,
            seed: 17,
        }
    }
}

impl WalkConfig {
    pub fn validate(&self) -> crate::Result<()> {
        let counts = [
            ("walks_per_node", self.walks_per_node),
            ("walk_length", self.walk_length),
            ("window", self.window),
            ("negatives", self.negatives),
            ("epochs", self.epochs),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(crate::Error::Config(format!("walk.{name} must be at least 1")));
            }
        }
        if !(self.return_bias > 0.0 && self.inout_bias > 0.0) {
            return Err(crate::Error::Config("walk biases p and q must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(crate::Error::Config("walk.learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// Undirected simple graph over dense node ids; self-loops are dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct WalkGraph {
    neighbors: Vec<Vec<usize>>,
}

impl WalkGraph {
    pub fn from_edges(nodes: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut neighbors = vec![Vec::new(); nodes];
        for (a, b) in edges {
            if a != b {
                neighbors[a].push(b);
                neighbors[b].push(a);
            }
        }
        for n in &mut neighbors {
            n.sort_unstable();
            n.dedup();
        }
        Self { neighbors }
    }

    pub fn from_kg(kg: &KnowledgeGraph) -> Self {
        let edges = kg.facts().iter().map(|f| {
            (
                kg.index_of(f.head).expect("validated fact"),
                kg.index_of(f.tail).expect("validated fact"),
            )
        });
        Self::from_edges(kg.entity_count(), edges)
    }

    pub fn node_count(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.neighbors[node]
    }

    fn adjacent(&self, a: usize, b: usize) -> bool {
        self.neighbors[a].binary_search(&b).is_ok()
    }
}

/// Both graphs in one node space, with each training anchor pair merged into
/// a single node so the two sides share structure coordinates.
#[derive(Debug, Clone)]
pub struct JointGraph {
    pub graph: WalkGraph,
    /// Node of every row of the first graph (identity).
    pub left_nodes: Vec<usize>,
    /// Node of every row of the second graph.
    pub right_nodes: Vec<usize>,
}

impl JointGraph {
    pub fn new(kg1: &KnowledgeGraph, kg2: &KnowledgeGraph, train: &[(EntityId, EntityId)]) -> Self {
        let n1 = kg1.entity_count();
        let merged: HashMap<usize, usize> = train
            .iter()
            .filter_map(|(l, r)| Some((kg2.index_of(*r)?, kg1.index_of(*l)?)))
            .collect();
        let mut next = n1;
        let right_nodes: Vec<usize> = (0..kg2.entity_count())
            .map(|row| {
                merged.get(&row).copied().unwrap_or_else(|| {
                    next += 1;
                    next - 1
                })
            })
            .collect();
        let left_nodes: Vec<usize> = (0..n1).collect();
        let edges1 = kg1
            .facts()
            .iter()
            .map(|f| (kg1.index_of(f.head).unwrap(), kg1.index_of(f.tail).unwrap()));
        let edges2 = kg2.facts().iter().map(|f| {
            (
                right_nodes[kg2.index_of(f.head).unwrap()],
                right_nodes[kg2.index_of(f.tail).unwrap()],
            )
        });
        let graph = WalkGraph::from_edges(next, edges1.chain(edges2));
        Self {
            graph,
            left_nodes,
            right_nodes,
        }
    }
}

/// Generates `walks_per_node` walks from every node, visiting nodes in id order.
///
/// After the first uniform step, a move from `cur` (arrived at from `prev`) to
/// `x` has weight `1/p` if `x == prev`, `1` if `x` neighbours `prev`, and
/// `1/q` otherwise. Walks stop early at nodes without neighbours.
pub fn biased_walks(graph: &WalkGraph, cfg: &WalkConfig) -> Vec<Vec<usize>> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = graph.node_count();
    let mut walks = Vec::with_capacity(n * cfg.walks_per_node);
    let inv_p = 1.0 / cfg.return_bias;
    let inv_q = 1.0 / cfg.inout_bias;
    let mut weights = Vec::new();
    for _ in 0..cfg.walks_per_node {
        for start in 0..n {
            let mut walk = Vec::with_capacity(cfg.walk_length);
            walk.push(start);
            while walk.len() < cfg.walk_length {
                let cur = *walk.last().unwrap();
                let nbrs = graph.neighbors(cur);
                if nbrs.is_empty() {
                    break;
                }
                let next = if walk.len() == 1 {
                    nbrs[rng.random_range(0..nbrs.len())]
                } else {
                    let prev = walk[walk.len() - 2];
                    weights.clear();
                    weights.extend(nbrs.iter().map(|&x| {
                        if x == prev {
                            inv_p
                        } else if graph.adjacent(prev, x) {
                            1.0
                        } else {
                            inv_q
                        }
                    }));
                    let total: f64 = weights.iter().sum();
                    let mut u = rng.random::<f64>() * total;
                    let mut pick = nbrs.len() - 1;
                    for (i, w) in weights.iter().enumerate() {
                        if u < *w {
                            pick = i;
                            break;
                        }
                        u -= w;
                    }
                    nbrs[pick]
                };
                walk.push(next);
            }
            walks.push(walk);
        }
    }
    walks
}
