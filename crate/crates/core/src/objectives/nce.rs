//! Negative-sampling objective and its pool-separated variant.
//!
//! Per document `d` with true class `c` and sampled negatives `n_1..n_k`:
//! `-[ln σ(v_c·v_d) + Σ_j ln σ(-v_{n_j}·v_d)]`, averaged over the batch.
//! The categorical-contrastive variant differs only in where negatives come
//! from: training-class anchors draw from training classes, K-shot anchors
//! from the other K-shot classes.

use rand::Rng;

use super::{
    check_batch, sample_negatives, BatchItem, CategoryEmbeddingTable, LossResult, NoiseDistribution,
};
use crate::corpus::{ClassId, Origin};
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, log_sigmoid, sigmoid};

pub fn nce_loss<R: Rng + ?Sized>(
    batch: &[BatchItem],
    table: &CategoryEmbeddingTable,
    dist: &NoiseDistribution,
    n_neg: usize,
    rng: &mut R,
) -> Result<LossResult> {
    let negatives = batch
        .iter()
        .map(|item| sample_negatives(item.class, dist, n_neg, rng))
        .collect::<Result<Vec<_>>>()?;
    nce_loss_with_negatives(batch, table, &negatives)
}

pub fn cc_loss<R: Rng + ?Sized>(
    batch: &[BatchItem],
    table: &CategoryEmbeddingTable,
    dist_train: &NoiseDistribution,
    dist_kshot: &NoiseDistribution,
    n_neg: usize,
    rng: &mut R,
) -> Result<LossResult> {
    let negatives = batch
        .iter()
        .map(|item| {
            let dist = match item.origin {
                Origin::TrainClass => dist_train,
                Origin::TestKShot => dist_kshot,
            };
            sample_negatives(item.class, dist, n_neg, rng)
        })
        .collect::<Result<Vec<_>>>()?;
    nce_loss_with_negatives(batch, table, &negatives)
}

/// Evaluates the objective with pre-drawn negatives, one list per anchor.
pub fn nce_loss_with_negatives(
    batch: &[BatchItem],
    table: &CategoryEmbeddingTable,
    negatives: &[Vec<ClassId>],
) -> Result<LossResult> {
    let dim = check_batch(batch, 1)?;
    if dim != table.dim() {
        return Err(Error::Dimension(format!(
            "embeddings of width {dim}, category rows of width {}",
            table.dim()
        )));
    }
    if negatives.len() != batch.len() {
        return Err(Error::InvalidConfig(
            "one negative list per anchor required".into(),
        ));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut result = LossResult::empty(batch);
    let mut total = 0.0;
    for (i, (item, negs)) in batch.iter().zip(negatives).enumerate() {
        let v_d = &item.embedding;
        let v_c = table.get(item.class)?;
        let pos = dot(v_c, v_d);
        total -= log_sigmoid(pos);
        // d/ds of -ln σ(s) is σ(s) - 1
        let g_pos = (sigmoid(pos) - 1.0) * scale;
        axpy(g_pos, v_c, &mut result.encoder_upstream[i]);
        axpy(g_pos, v_d, result.category_grad(item.class, dim));

        for &n in negs {
            let v_n = table.get(n)?;
            let s = dot(v_n, v_d);
            total -= log_sigmoid(-s);
            // d/ds of -ln σ(-s) is σ(s)
            let g_neg = sigmoid(s) * scale;
            axpy(g_neg, v_n, &mut result.encoder_upstream[i]);
            axpy(g_neg, v_d, result.category_grad(n, dim));
        }
    }
    result.loss = total * scale;
    result.negatives = negatives.to_vec();
    Ok(result)
}
