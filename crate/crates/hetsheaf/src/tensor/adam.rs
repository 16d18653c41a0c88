//! Adam with decoupled weight decay.

use crate::error::{Error, Result};
use crate::tensor::params::ParamStore;

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamConfig { lr, weight_decay, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    pub t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let m = store.entries().iter().map(|p| vec![0.0; p.data.len()]).collect();
        let v = store.entries().iter().map(|p| vec![0.0; p.data.len()]).collect();
        AdamState { t: 0, m, v }
    }
}

/// One full-batch step. Decay is applied first (p <- p - lr*wd*p), then the
/// bias-corrected Adam update. A NaN anywhere in the gradients aborts the
/// step with the parameters untouched.
pub fn adam_step(
    store: &mut ParamStore,
    grads: &[Vec<f64>],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if grads.len() != store.len() {
        return Err(Error::dim(format!(
            "adam_step: {} gradient buffers for {} parameters",
            grads.len(),
            store.len()
        )));
    }
    for (i, g) in grads.iter().enumerate() {
        let p = store.entry(i);
        if g.len() != p.data.len() {
            return Err(Error::dim(format!(
                "adam_step: gradient length {} for {} ({} values)",
                g.len(),
                p.name,
                p.data.len()
            )));
        }
        if g.iter().any(|x| x.is_nan()) {
            return Err(Error::numeric(format!("adam_step: NaN gradient in {}", p.name)));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..store.len() {
        let g = &grads[i];
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        let p = &mut store.entry_mut(i).data;
        for j in 0..p.len() {
            p[j] -= cfg.lr * cfg.weight_decay * p[j];
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            let mhat = m[j] / bc1;
            let vhat = v[j] / bc2;
            p[j] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}
