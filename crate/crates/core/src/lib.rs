//! Constrained few-shot text classification with learned category
//! embeddings.
//!
//! The pipeline: cap every training class at M documents, merge the K-shot
//! support set into the training pool, jointly train a document encoder and
//! one embedding per class, then label test documents by their nearest
//! K-shot category embedding.

pub mod corpus;
pub mod encoder;
pub mod error;
pub mod fewshot;
pub mod linalg;
pub mod objectives;
pub mod optim;
pub mod synthgen;
pub mod trainer;

#[cfg(test)]
mod testutil;

pub use corpus::{
    ClassId, ClassIndex, ConstraintSpec, Document, LabeledCorpus, MergedTrainingSet, Origin, RawCorpus,
    RawDocument, TokenId, Vocabulary,
};
pub use encoder::{DocEmbedding, DocumentEncoder, EncoderParams};
pub use error::{Error, Result};
pub use fewshot::{EpisodeSpec, EvalMode, EvalReport, Metric, QueryCount, QuerySet, SupportSet};
pub use objectives::{CategoryEmbeddingTable, LossResult, NoiseDistribution, Objective};
pub use optim::OptimizerConfig;
pub use synthgen::SynthSpec;
pub use trainer::{ModelParams, TrainConfig, TrainedModel};
