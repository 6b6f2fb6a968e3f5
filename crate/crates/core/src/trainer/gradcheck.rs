//! Central finite-difference verification of the full training gradient:
//! encoder, category rows and NCA projection, through any objective.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{batch_loss_and_grads, draw_negatives, ModelParams, NoisePools, TrainConfig};
use crate::corpus::{ClassId, Document, Origin};
use crate::error::Result;
use crate::objectives::{NoiseDistribution, Objective};

/// Denominator floor for [`relative_error`]; below it the comparison is
/// effectively absolute.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

/// A tiny model plus one batch to differentiate through.
#[derive(Clone, Debug)]
pub struct GradCheckCase {
    pub params: ModelParams,
    pub documents: Vec<Document>,
    pub origins: Vec<Origin>,
    pub pools: NoisePools,
}

/// Random instance with dims ≤ 8 and batch ≤ 6. Training classes are ids
/// `0..n_train`, K-shot classes follow; the first two documents always share
/// a class so contrastive objectives have a positive pair.
pub fn random_case(config: &TrainConfig, seed: u64) -> GradCheckCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab_rows = rng.gen_range(2..=8);
    let n_train = rng.gen_range(2..=3u32);
    let n_kshot = rng.gen_range(2..=3u32);
    let classes = n_train + n_kshot;
    let batch = rng.gen_range(2..=6);

    let mut params = ModelParams::init(
        &TrainConfig {
            seed: rng.gen(),
            ..config.clone()
        },
        vocab_rows,
        classes as usize,
    );
    // Push everything away from the tiny initialization so every gradient
    // path carries signal.
    for block in params.blocks_mut() {
        for x in block.iter_mut() {
            *x = rng.gen_range(-1.0..1.0);
        }
    }

    let mut documents: Vec<Document> = (0..batch)
        .map(|i| Document {
            id: format!("g{i}"),
            tokens: (0..rng.gen_range(1..=5))
                .map(|_| rng.gen_range(0..vocab_rows as u32))
                .collect(),
            label: ClassId(rng.gen_range(0..classes)),
        })
        .collect();
    documents[1].label = documents[0].label;
    let origins = documents
        .iter()
        .map(|d| {
            if d.label.0 < n_train {
                Origin::TrainClass
            } else {
                Origin::TestKShot
            }
        })
        .collect();
    GradCheckCase {
        params,
        documents,
        origins,
        pools: NoisePools {
            all: NoiseDistribution::uniform((0..classes).map(ClassId)),
            train: NoiseDistribution::uniform((0..n_train).map(ClassId)),
            kshot: NoiseDistribution::uniform((n_train..classes).map(ClassId)),
        },
    }
}

/// A random configuration for `objective` (widths ≤ 8, 1 to 5 negatives,
/// temperature in [0.1, 1)) together with a [`random_case`] for it.
pub fn random_instance(objective: Objective, seed: u64) -> (TrainConfig, GradCheckCase) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let config = TrainConfig {
        objective,
        embed_dim: rng.gen_range(1..=8),
        output_dim: rng.gen_range(1..=8),
        nca_dim: Some(rng.gen_range(1..=8)),
        n_neg: rng.gen_range(1..=5),
        tau: rng.gen_range(0.1..1.0),
        seed: rng.gen(),
        ..TrainConfig::default()
    };
    let case = random_case(&config, seed);
    (config, case)
}

/// Largest relative error between analytic gradients and central
/// differences with step `epsilon`, over every parameter. Negatives are drawn
/// once and held fixed. The optimizer and learning rate play no part.
pub fn grad_check(config: &TrainConfig, case: &GradCheckCase, epsilon: f64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let anchors: Vec<(ClassId, Origin)> = case
        .documents
        .iter()
        .zip(&case.origins)
        .map(|(d, &o)| (d.label, o))
        .collect();
    let negatives = draw_negatives(config.objective, &anchors, &case.pools, config.n_neg, &mut rng)?;
    let docs: Vec<&Document> = case.documents.iter().collect();
    let loss_at = |p: &ModelParams| -> Result<f64> {
        Ok(batch_loss_and_grads(config, p, &docs, &case.origins, &negatives)?
            .0
            .loss)
    };

    let mut params = case.params.clone();
    if config.objective == Objective::Nca && params.nca.is_none() {
        params = ModelParams {
            nca: ModelParams::init(config, 1, 0).nca,
            ..params
        };
    }
    let (_, grads) = batch_loss_and_grads(config, &params, &docs, &case.origins, &negatives)?;
    let analytic: Vec<Vec<f64>> = grads.blocks().into_iter().map(<[f64]>::to_vec).collect();

    let mut worst: f64 = 0.0;
    for (b, block) in analytic.iter().enumerate() {
        for (i, &a) in block.iter().enumerate() {
            let orig = params.blocks_mut()[b][i];
            params.blocks_mut()[b][i] = orig + epsilon;
            let plus = loss_at(&params)?;
            params.blocks_mut()[b][i] = orig - epsilon;
            let minus = loss_at(&params)?;
            params.blocks_mut()[b][i] = orig;
            worst = worst.max(relative_error(a, (plus - minus) / (2.0 * epsilon)));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::OptimizerConfig;

    fn config(objective: Objective) -> TrainConfig {
        TrainConfig {
            objective,
            embed_dim: 5,
            output_dim: 4,
            n_neg: 3,
            tau: 0.5,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn nce_tiny_instance() {
        let cfg = config(Objective::Nce);
        let err = grad_check(&cfg, &random_case(&cfg, 1), 1e-5).unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn independent_of_learning_rate_and_optimizer() {
        let cfg = config(Objective::Cc);
        let case = random_case(&cfg, 2);
        let a = grad_check(&cfg, &case, 1e-5).unwrap();
        let other = TrainConfig {
            learning_rate: 123.0,
            optimizer: OptimizerConfig::Sgd,
            ..cfg
        };
        assert_eq!(a, grad_check(&other, &case, 1e-5).unwrap());
    }

    #[test]
    fn every_objective_passes() {
        for objective in Objective::ALL {
            let cfg = config(objective);
            for seed in 0..10 {
                let err = grad_check(&cfg, &random_case(&cfg, seed), 1e-5).unwrap();
                assert!(err < 1e-4, "{objective} seed {seed}: {err}");
            }
        }
    }

    #[test]
    fn random_instances_pass() {
        for objective in Objective::ALL {
            for seed in 0..20 {
                let (cfg, case) = random_instance(objective, seed);
                assert!(cfg.embed_dim <= 8 && cfg.output_dim <= 8 && case.documents.len() <= 6);
                let err = grad_check(&cfg, &case, 1e-5).unwrap();
                assert!(err < 1e-4, "{objective} seed {seed}: {err}");
            }
        }
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!((relative_error(0.0, 1e-9) - 1e-3).abs() < 1e-12);
    }
}
