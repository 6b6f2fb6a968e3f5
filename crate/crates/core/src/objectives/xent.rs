//! Softmax cross-entropy against every category row.

use super::{check_batch, BatchItem, CategoryEmbeddingTable, LossResult};
use crate::corpus::ClassId;
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, log_sum_exp};

/// Logits are `v_c · v_d` for every row of `table`; the loss is the mean
/// negative log-softmax of the true class.
pub fn xent_loss(batch: &[BatchItem], table: &CategoryEmbeddingTable) -> Result<LossResult> {
    let dim = check_batch(batch, 1)?;
    if dim != table.dim() {
        return Err(Error::Dimension(format!(
            "embeddings of width {dim}, category rows of width {}",
            table.dim()
        )));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut result = LossResult::empty(batch);
    let mut total = 0.0;
    for (i, item) in batch.iter().enumerate() {
        table.get(item.class)?;
        let logits: Vec<f64> = (0..table.len())
            .map(|c| dot(table.rows.row(c), &item.embedding))
            .collect();
        let lse = log_sum_exp(logits.iter().copied());
        total += lse - logits[item.class.index()];
        for (c, &logit) in logits.iter().enumerate() {
            let mut coef = (logit - lse).exp();
            if c == item.class.index() {
                coef -= 1.0;
            }
            let coef = coef * scale;
            axpy(coef, table.rows.row(c), &mut result.encoder_upstream[i]);
            axpy(
                coef,
                &item.embedding,
                result.category_grad(ClassId(c as u32), dim),
            );
        }
    }
    result.loss = total * scale;
    Ok(result)
}
