//! Training objectives over a batch of document embeddings, with analytic
//! gradients for the embeddings, category rows and (for NCA) the projection.

mod nca;
mod nce;
mod noise;
mod sc;
mod xent;

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{ClassId, Origin};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub use nca::{nca_loss, NcaParams};
pub use nce::{cc_loss, nce_loss, nce_loss_with_negatives};
pub use noise::{sample_negatives, NoiseDistribution};
pub use sc::{sc_loss, ScConfig};
pub use xent::xent_loss;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Nce,
    Cc,
    Sc,
    Nca,
    Xent,
}

impl Objective {
    pub const ALL: [Objective; 5] = [
        Objective::Nce,
        Objective::Cc,
        Objective::Sc,
        Objective::Nca,
        Objective::Xent,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Objective::Nce => "nce",
            Objective::Cc => "cc",
            Objective::Sc => "sc",
            Objective::Nca => "nca",
            Objective::Xent => "xent",
        }
    }

    /// Objectives that score documents against category rows.
    pub fn uses_categories(self) -> bool {
        matches!(self, Objective::Nce | Objective::Cc | Objective::Xent)
    }

    /// Objectives that need several same-class documents per batch.
    pub fn needs_positives(self) -> bool {
        matches!(self, Objective::Sc | Objective::Nca)
    }
}

impl std::fmt::Display for Objective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Objective::ALL
            .into_iter()
            .find(|o| o.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown objective {s:?}")))
    }
}

/// One learned vector per class; row index equals class id.
#[derive(Clone, Debug, PartialEq)]
pub struct CategoryEmbeddingTable {
    pub rows: Matrix,
}

impl CategoryEmbeddingTable {
    pub fn zeros(classes: usize, dim: usize) -> Self {
        CategoryEmbeddingTable {
            rows: Matrix::zeros(classes, dim),
        }
    }

    /// Rows uniform in `±1e-3`.
    pub fn init<R: Rng + ?Sized>(classes: usize, dim: usize, rng: &mut R) -> Self {
        CategoryEmbeddingTable {
            rows: Matrix::uniform(classes, dim, 1e-3, rng),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.rows.cols()
    }

    pub fn get(&self, class: ClassId) -> Result<&[f64]> {
        if class.index() < self.len() {
            Ok(self.rows.row(class.index()))
        } else {
            Err(Error::MissingCategory(class))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchItem {
    pub embedding: Vec<f64>,
    pub class: ClassId,
    pub origin: Origin,
}

impl BatchItem {
    pub fn new(embedding: Vec<f64>, class: ClassId) -> Self {
        BatchItem {
            embedding,
            class,
            origin: Origin::TrainClass,
        }
    }

    pub fn with_origin(mut self, origin: Origin) -> Self {
        self.origin = origin;
        self
    }
}

/// Loss value plus gradients. `loss` is the quantity minimized.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossResult {
    pub loss: f64,
    /// Gradient with respect to each batch embedding, in batch order.
    pub encoder_upstream: Vec<Vec<f64>>,
    /// Gradients for category rows touched by this batch only.
    pub category_grads: BTreeMap<ClassId, Vec<f64>>,
    /// Gradient for the NCA projection, when the objective has one.
    pub projection_grad: Option<Matrix>,
    pub skipped_anchors: usize,
    /// Negative classes sampled per anchor (sampling objectives only).
    pub negatives: Vec<Vec<ClassId>>,
}

impl LossResult {
    fn empty(batch: &[BatchItem]) -> Self {
        LossResult {
            encoder_upstream: batch.iter().map(|b| vec![0.0; b.embedding.len()]).collect(),
            ..Default::default()
        }
    }

    fn category_grad(&mut self, class: ClassId, dim: usize) -> &mut Vec<f64> {
        self.category_grads.entry(class).or_insert_with(|| vec![0.0; dim])
    }
}

fn check_batch(batch: &[BatchItem], min: usize) -> Result<usize> {
    if batch.len() < min {
        return Err(Error::InvalidConfig(format!(
            "batch of {} items, objective needs at least {min}",
            batch.len()
        )));
    }
    let dim = batch[0].embedding.len();
    if batch.iter().any(|b| b.embedding.len() != dim) {
        return Err(Error::Dimension("ragged batch embeddings".into()));
    }
    Ok(dim)
}
