//! Neighbourhood component analysis over a learned linear projection.

use rand::Rng;

use super::{check_batch, BatchItem, LossResult};
use crate::error::{Error, Result};
use crate::linalg::{axpy, log_sum_exp, Matrix};

#[derive(Clone, Debug, PartialEq)]
pub struct NcaParams {
    /// `O' × O`
    pub projection: Matrix,
}

impl NcaParams {
    /// Identity when square, otherwise uniform in `±1/√O`.
    pub fn init<R: Rng + ?Sized>(out_dim: usize, in_dim: usize, rng: &mut R) -> Self {
        let projection = if out_dim == in_dim {
            Matrix::identity(in_dim)
        } else {
            Matrix::uniform(out_dim, in_dim, 1.0 / (in_dim as f64).sqrt(), rng)
        };
        NcaParams { projection }
    }
}

/// For each anchor `i` with same-class partners `C_i`:
/// `-ln Σ_{j∈C_i} exp(-‖A v_i - A v_j‖²) / Σ_{k≠i} exp(-‖A v_i - A v_k‖²)`.
/// Anchors without partners are skipped; the loss is the mean over the rest.
pub fn nca_loss(batch: &[BatchItem], params: &NcaParams) -> Result<LossResult> {
    let dim = check_batch(batch, 1)?;
    let a = &params.projection;
    if a.cols() != dim {
        return Err(Error::Dimension(format!(
            "projection expects width {}, embeddings have {dim}",
            a.cols()
        )));
    }
    let n = batch.len();
    let anchors: Vec<usize> = (0..n)
        .filter(|&i| (0..n).any(|j| j != i && batch[j].class == batch[i].class))
        .collect();
    if anchors.is_empty() {
        return Err(Error::NoPositivePairs);
    }
    let scale = 1.0 / anchors.len() as f64;
    let projected: Vec<Vec<f64>> = batch.iter().map(|b| a.matvec(&b.embedding)).collect();

    let mut result = LossResult::empty(batch);
    result.skipped_anchors = n - anchors.len();
    let mut grad_a = Matrix::zeros(a.rows(), a.cols());
    let mut total = 0.0;
    for &i in &anchors {
        let others: Vec<usize> = (0..n).filter(|&k| k != i).collect();
        let neg_dist: Vec<f64> = others
            .iter()
            .map(|&k| -crate::linalg::squared_distance(&projected[i], &projected[k]))
            .collect();
        let same: Vec<bool> = others.iter().map(|&k| batch[k].class == batch[i].class).collect();
        let lse_all = log_sum_exp(neg_dist.iter().copied());
        let lse_same = log_sum_exp(neg_dist.iter().zip(&same).filter(|(_, &s)| s).map(|(d, _)| *d));
        total += lse_all - lse_same;

        for ((&k, &nd), &is_same) in others.iter().zip(&neg_dist).zip(&same) {
            // d(term)/d(dist_ik) = r_ik - p_ik
            let mut coef = -(nd - lse_all).exp();
            if is_same {
                coef += (nd - lse_same).exp();
            }
            let coef = coef * scale;
            let diff: Vec<f64> = batch[i]
                .embedding
                .iter()
                .zip(&batch[k].embedding)
                .map(|(x, y)| x - y)
                .collect();
            let proj_diff: Vec<f64> = projected[i]
                .iter()
                .zip(&projected[k])
                .map(|(x, y)| x - y)
                .collect();
            grad_a.add_outer(2.0 * coef, &proj_diff, &diff);
            let back = a.matvec_t(&proj_diff);
            axpy(2.0 * coef, &back, &mut result.encoder_upstream[i]);
            axpy(-2.0 * coef, &back, &mut result.encoder_upstream[k]);
        }
    }
    result.loss = total * scale;
    result.projection_grad = Some(grad_a);
    Ok(result)
}
