//! Adam with bias correction and L2 folded into the gradient.

use crate::error::{Error, Result};
use crate::params::{Gradients, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    step: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let zeros = || store.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect();
        AdamState {
            config,
            first: zeros(),
            second: zeros(),
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, i: usize) -> &Tensor {
        &self.first[i]
    }

    pub fn second_moment(&self, i: usize) -> &Tensor {
        &self.second[i]
    }
}

/// One Adam update of every parameter in `store`.
///
/// Nothing is modified when any gradient is non-finite.
pub fn adam_step(
    store: &mut ParamStore,
    grads: &Gradients,
    state: &mut AdamState,
    l2: f64,
) -> Result<()> {
    if grads.len() != store.len() || state.first.len() != store.len() {
        return Err(Error::Contract(format!(
            "optimizer expects {} parameters, got {} gradients and {} moments",
            store.len(),
            grads.len(),
            state.first.len()
        )));
    }
    if !(l2 >= 0.0) {
        return Err(Error::Config(format!("l2 strength {l2} must be >= 0")));
    }
    for id in store.ids() {
        let g = grads.get(id);
        store.get(id).same_shape(g, "adam_step")?;
        if !g.all_finite() {
            return Err(Error::NonFiniteGradient(store.name(id).to_string()));
        }
    }

    state.step += 1;
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);

    for id in store.ids() {
        let i = id.index();
        let g = grads.get(id).data();
        let m = state.first[i].data_mut();
        let v = state.second[i].data_mut();
        let p = store.get_mut(id).data_mut();
        for j in 0..p.len() {
            let gj = g[j] + l2 * p[j];
            m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
            v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            p[j] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
