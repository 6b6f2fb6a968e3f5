use rand::Rng;

use crate::corpus::ClassId;
use crate::error::{Error, Result};

/// Uniform distribution over a pool of candidate negative classes.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NoiseDistribution {
    pool: Vec<ClassId>,
}

impl NoiseDistribution {
    pub fn uniform(pool: impl IntoIterator<Item = ClassId>) -> Self {
        let mut pool: Vec<ClassId> = pool.into_iter().collect();
        pool.sort_unstable();
        pool.dedup();
        NoiseDistribution { pool }
    }

    pub fn pool(&self) -> &[ClassId] {
        &self.pool
    }

    pub fn contains(&self, class: ClassId) -> bool {
        self.pool.binary_search(&class).is_ok()
    }
}

/// Draws `n_neg` classes uniformly with replacement from the pool minus
/// `anchor_class`.
pub fn sample_negatives<R: Rng + ?Sized>(
    anchor_class: ClassId,
    dist: &NoiseDistribution,
    n_neg: usize,
    rng: &mut R,
) -> Result<Vec<ClassId>> {
    if n_neg < 1 {
        return Err(Error::InvalidConfig("n_neg must be at least 1".into()));
    }
    let pool = dist.pool();
    let excluded = pool.binary_search(&anchor_class).ok();
    let effective = pool.len() - usize::from(excluded.is_some());
    if effective == 0 {
        return Err(Error::DegenerateNoisePool(anchor_class));
    }
    Ok((0..n_neg)
        .map(|_| {
            let mut j = rng.gen_range(0..effective);
            if excluded.is_some_and(|p| j >= p) {
                j += 1;
            }
            pool[j]
        })
        .collect())
}
