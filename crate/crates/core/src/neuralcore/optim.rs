use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = store
            .ids()
            .map(|id| vec![0.0; store.value(id).len()])
            .collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One bias-corrected update from the gradients accumulated in `store`.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if self.m.len() != store.len() {
            return Err(Error::shape(format!(
                "Adam state for {} parameters, store has {}",
                self.m.len(),
                store.len()
            )));
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for (k, id) in store.ids().enumerate() {
            let g = store.grad(id).to_vec();
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            let w = store.value_mut(id).data_mut();
            for i in 0..g.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                w[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// `w <- w - lr * g`.
pub fn sgd_step(store: &mut ParamStore, lr: f64) {
    for id in store.ids().collect::<Vec<_>>() {
        let g = store.grad(id).to_vec();
        store
            .value_mut(id)
            .data_mut()
            .iter_mut()
            .zip(&g)
            .for_each(|(w, g)| *w -= lr * g);
    }
}

/// SGD step followed by clamping every parameter to `[-bound, bound]`.
pub fn sgd_step_clipped(store: &mut ParamStore, lr: f64, bound: f64) -> Result<()> {
    if !(bound > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "clip bound must be positive, got {bound}"
        )));
    }
    sgd_step(store, lr);
    store.clip(bound);
    Ok(())
}
