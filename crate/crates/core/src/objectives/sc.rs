//! Supervised contrastive loss over in-batch positives.

use serde::{Deserialize, Serialize};

use super::{check_batch, BatchItem, LossResult};
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, log_sum_exp};

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScConfig {
    pub tau: f64,
}

impl Default for ScConfig {
    fn default() -> Self {
        ScConfig { tau: 0.1 }
    }
}

/// For each anchor `i` with at least one same-class partner:
/// `-(1/|P(i)|) Σ_{p∈P(i)} ln[exp(v_i·v_p/τ) / Σ_{a≠i} exp(v_i·v_a/τ)]`.
/// Anchors without partners are skipped; the loss is the mean over the rest.
pub fn sc_loss(batch: &[BatchItem], config: &ScConfig) -> Result<LossResult> {
    check_batch(batch, 1)?;
    if config.tau.is_nan() || config.tau <= 0.0 {
        return Err(Error::InvalidConfig("tau must be positive".into()));
    }
    let tau = config.tau;
    let n = batch.len();

    let anchors: Vec<usize> = (0..n)
        .filter(|&i| (0..n).any(|p| p != i && batch[p].class == batch[i].class))
        .collect();
    if anchors.is_empty() {
        return Err(Error::NoPositivePairs);
    }
    let scale = 1.0 / anchors.len() as f64;

    let mut result = LossResult::empty(batch);
    result.skipped_anchors = n - anchors.len();
    let mut total = 0.0;
    for &i in &anchors {
        let v_i = &batch[i].embedding;
        let others: Vec<usize> = (0..n).filter(|&a| a != i).collect();
        let logits: Vec<f64> = others
            .iter()
            .map(|&a| dot(v_i, &batch[a].embedding) / tau)
            .collect();
        let lse = log_sum_exp(logits.iter().copied());
        let positives: Vec<bool> = others.iter().map(|&a| batch[a].class == batch[i].class).collect();
        let n_pos = positives.iter().filter(|&&p| p).count() as f64;

        let pos_sum: f64 = logits
            .iter()
            .zip(&positives)
            .filter(|(_, &p)| p)
            .map(|(l, _)| l)
            .sum();
        total += lse - pos_sum / n_pos;

        for ((&a, &logit), &is_pos) in others.iter().zip(&logits).zip(&positives) {
            let mut coef = (logit - lse).exp();
            if is_pos {
                coef -= 1.0 / n_pos;
            }
            let coef = coef * scale / tau;
            let v_a = batch[a].embedding.clone();
            axpy(coef, &v_a, &mut result.encoder_upstream[i]);
            axpy(coef, v_i, &mut result.encoder_upstream[a]);
        }
    }
    result.loss = total * scale;
    Ok(result)
}
