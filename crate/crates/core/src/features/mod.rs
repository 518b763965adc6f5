//! Entity feature pre-processing: name, time and structure views, their
//! fusion into one multi-view embedding, and CSLS candidate retrieval.

mod csls;
mod fusion;
mod matrix;
mod names;
mod noise;
mod pipeline;
mod skipgram;
mod time2vec;
mod walks;
mod whiten;

pub use csls::{csls_topk, Candidate, CslsConfig, CslsIndex};
pub use fusion::{fuse_and_train, Fused, FusionModel, LossDistance, MarginObjective, TrainConfig, Triple, Views};
pub use matrix::{EmbeddingMatrix, KeyedVectors};
pub use names::{normalize_name, HashingNameEncoder};
pub use noise::inject_noise;
pub use pipeline::{build_views, preprocess, FeatureConfig, NameVectors};
pub use skipgram::train_skipgram;
pub use time2vec::{encode_timestamp, entity_time_features, time2vec, Time2VecParams};
pub use walks::{biased_walks, JointGraph, WalkConfig, WalkGraph};
pub use whiten::{whiten, Whitening};
