use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::{Gradients, NeuroError, ParamId, ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
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

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

/// Bias-corrected adaptive-moment optimizer.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: HashMap<ParamId, Tensor>,
    v: HashMap<ParamId, Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: HashMap::new(),
            v: HashMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Updates every parameter that has a gradient.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<(), NeuroError> {
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        let ids: Vec<ParamId> = store.ids().collect();
        for id in ids {
            let Some(g) = grads.param(id) else {
                continue;
            };
            let p = store.get_mut(id);
            if p.shape() != g.shape() {
                return Err(NeuroError::Shape(format!(
                    "gradient {:?} for parameter of shape {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            let [r, c] = p.shape();
            let m = self.m.entry(id).or_insert_with(|| Tensor::zeros(r, c));
            let v = self.v.entry(id).or_insert_with(|| Tensor::zeros(r, c));
            for (((pi, mi), vi), gi) in p
                .data_mut()
                .iter_mut()
                .zip(m.data_mut())
                .zip(v.data_mut())
                .zip(g.data())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                *pi -= lr * (*mi / c1) / ((*vi / c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}
