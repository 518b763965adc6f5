use serde::{Deserialize, Serialize};

use super::{
    biased_walks, entity_time_features, fuse_and_train, train_skipgram, EmbeddingMatrix, Fused,
    HashingNameEncoder, JointGraph, Time2VecParams, TrainConfig, Views, WalkConfig, Whitening,
};
use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    /// Width kept after whitening the name vectors.
    pub name_dim: usize,
    /// Time2Vec width.
    pub time_dim: usize,
    pub time_seed: u64,
    /// Skip-gram width.
    pub structure_dim: usize,
    pub walk: WalkConfig,
    pub train: TrainConfig,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            name_dim: 64,
            time_dim: 32,
            time_seed: 11,
            structure_dim: 64,
            walk: WalkConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.name_dim == 0 || self.time_dim == 0 || self.structure_dim == 0 {
            return Err(Error::Config("feature dimensions must be at least 1".into()));
        }
        self.walk.validate()?;
        self.train.validate()
    }
}

/// Raw name vectors for both graphs, rows in entity order.
#[derive(Debug, Clone, PartialEq)]
pub struct NameVectors {
    pub left: EmbeddingMatrix,
    pub right: EmbeddingMatrix,
}

/// Builds the name, time and structure views of both graphs.
///
/// Names are whitened jointly so both graphs share one basis. Structure
/// comes from one walk corpus over both graphs with the training anchors
/// merged. Without `names`, the hashing encoder is used.
pub fn build_views(
    kg1: &KnowledgeGraph,
    kg2: &KnowledgeGraph,
    train: &[(EntityId, EntityId)],
    names: Option<&NameVectors>,
    cfg: &FeatureConfig,
) -> Result<(Views, Views)> {
    cfg.validate()?;
    if kg1.entity_count() == 0 || kg2.entity_count() == 0 {
        return Err(Error::InvalidArgument("both graphs need at least one entity".into()));
    }

    let encoded;
    let names = match names {
        Some(n) => n,
        None => {
            log::info!("no name vectors given; using the hashing name encoder");
            let enc = HashingNameEncoder::default();
            encoded = NameVectors {
                left: enc.encode_kg(kg1),
                right: enc.encode_kg(kg2),
            };
            &encoded
        }
    };
    if names.left.rows() != kg1.entity_count() || names.right.rows() != kg2.entity_count() {
        return Err(Error::InvalidArgument("name vectors do not cover every entity".into()));
    }
    let stacked = names.left.vstack(&names.right)?;
    let whitening = Whitening::fit_up_to(&stacked, cfg.name_dim)?;
    if whitening.output_dim() < cfg.name_dim {
        log::warn!(
            "name view keeps {} whitened dimensions (requested {})",
            whitening.output_dim(),
            cfg.name_dim
        );
    }
    let (name1, name2) = whitening.apply(&stacked)?.split_rows(kg1.entity_count());

    let t2v = Time2VecParams::seeded(cfg.time_dim, cfg.time_seed)?;
    let time1 = entity_time_features(kg1, &t2v);
    let time2 = entity_time_features(kg2, &t2v);

    let joint = JointGraph::new(kg1, kg2, train);
    let corpus = biased_walks(&joint.graph, &cfg.walk);
    let nodes = train_skipgram(&corpus, joint.graph.node_count(), cfg.structure_dim, &cfg.walk)?;
    let gather = |idx: &[usize]| {
        let mut m = EmbeddingMatrix::zeros(idx.len(), cfg.structure_dim);
        for (row, &node) in idx.iter().enumerate() {
            m.row_mut(row).copy_from_slice(nodes.row(node));
        }
        m
    };

    Ok((
        Views {
            name: name1,
            time: time1,
            structure: gather(&joint.left_nodes),
        },
        Views {
            name: name2,
            time: time2,
            structure: gather(&joint.right_nodes),
        },
    ))
}

/// Runs the whole pre-processing stage and returns the fused embeddings.
pub fn preprocess(
    kg1: &KnowledgeGraph,
    kg2: &KnowledgeGraph,
    train: &[(EntityId, EntityId)],
    names: Option<&NameVectors>,
    cfg: &FeatureConfig,
) -> Result<Fused> {
    let (left, right) = build_views(kg1, kg2, train, names, cfg)?;
    let rows: Vec<(usize, usize)> = train
        .iter()
        .map(|(l, r)| match (kg1.index_of(*l), kg2.index_of(*r)) {
            (Some(a), Some(b)) => Ok((a, b)),
            _ => Err(Error::Integrity(format!("training anchor ({l}, {r}) not in the graphs"))),
        })
        .collect::<Result<_>>()?;
    fuse_and_train(&left, &right, &rows, &cfg.train)
}
