//! First-order optimizers over flat parameter blocks.

use serde::{Deserialize, Serialize};

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum OptimizerConfig {
    Sgd,
    Adam {
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_eps() -> f64 {
    1e-8
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Adam {
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

#[derive(Clone, Debug, Default)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Optimizer state for a fixed sequence of parameter blocks. Blocks must be
/// passed to [`Optimizer::step`] in the same order and with the same sizes
/// on every call.
#[derive(Clone, Debug)]
pub struct Optimizer {
    config: OptimizerConfig,
    moments: Vec<Moments>,
    steps: u64,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Self {
        Optimizer {
            config,
            moments: Vec::new(),
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, lr: f64, blocks: &mut [(&mut [f64], &[f64])]) {
        self.steps += 1;
        match self.config {
            OptimizerConfig::Sgd => {
                for (params, grads) in blocks.iter_mut() {
                    for (p, g) in params.iter_mut().zip(grads.iter()) {
                        *p -= lr * g;
                    }
                }
            }
            OptimizerConfig::Adam { beta1, beta2, eps } => {
                if self.moments.len() < blocks.len() {
                    self.moments.resize_with(blocks.len(), Moments::default);
                }
                let t = self.steps as i32;
                let bias1 = 1.0 - beta1.powi(t);
                let bias2 = 1.0 - beta2.powi(t);
                for ((params, grads), state) in blocks.iter_mut().zip(&mut self.moments) {
                    if state.m.len() != params.len() {
                        state.m = vec![0.0; params.len()];
                        state.v = vec![0.0; params.len()];
                    }
                    for (i, (p, &g)) in params.iter_mut().zip(grads.iter()).enumerate() {
                        let m = beta1 * state.m[i] + (1.0 - beta1) * g;
                        let v = beta2 * state.v[i] + (1.0 - beta2) * g * g;
                        state.m[i] = m;
                        state.v[i] = v;
                        *p -= lr * (m / bias1) / ((v / bias2).sqrt() + eps);
                    }
                }
            }
        }
    }
}
