use serde::{Deserialize, Serialize};

use super::{AutodiffError, Gradients, ParamId, ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with bias-corrected moments over a fixed subset of parameters.
#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    ids: Vec<ParamId>,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, ids: Vec<ParamId>, store: &ParamStore) -> Self {
        let first: Vec<Tensor> = ids.iter().map(|id| Tensor::zeros(store.get(*id).shape())).collect();
        Self {
            config,
            second: first.clone(),
            first,
            ids,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    /// Applies one update; parameters absent from `grads` see a zero gradient.
    /// Nothing is modified if any gradient is non-finite.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<(), AutodiffError> {
        for id in &self.ids {
            if let Some(g) = grads.get(*id) {
                if g.shape() != store.get(*id).shape() {
                    return Err(AutodiffError::ShapeMismatch {
                        op: "adam_step",
                        left: store.get(*id).shape().to_vec(),
                        right: g.shape().to_vec(),
                    });
                }
                if !g.all_finite() {
                    return Err(AutodiffError::NonFiniteGradient(store.name(*id).to_string()));
                }
            }
        }
        self.step += 1;
        let AdamConfig { learning_rate, beta1, beta2, epsilon } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (slot, id) in self.ids.iter().enumerate() {
            let grad = grads.get(*id);
            let m = self.first[slot].data_mut();
            let v = self.second[slot].data_mut();
            let p = store.get_mut(*id).data_mut();
            for j in 0..p.len() {
                let gj = grad.map_or(0.0, |g| g.data()[j]);
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                p[j] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}
