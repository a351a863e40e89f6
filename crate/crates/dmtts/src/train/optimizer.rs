//! Adaptive-moment optimizer with bias correction and linear warmup.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::params::Parameters;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Steps of linear warmup from 0 to learning_rate; constant afterwards.
    pub warmup_steps: u64,
}

impl AdamConfig {
    pub fn new(learning_rate: f64, warmup_steps: u64) -> AdamConfig {
        AdamConfig { learning_rate, beta1: 0.9, beta2: 0.999, eps: 1e-8, warmup_steps }
    }
}

/// First/second moment accumulators over the flat parameter layout.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(n_params: usize) -> OptimizerState {
        OptimizerState { m: vec![0.0; n_params], v: vec![0.0; n_params], step: 0 }
    }
}

/// Effective learning rate at 1-based step `step`.
pub fn lr_at(cfg: &AdamConfig, step: u64) -> f64 {
    if cfg.warmup_steps == 0 || step >= cfg.warmup_steps {
        cfg.learning_rate
    } else {
        cfg.learning_rate * step as f64 / cfg.warmup_steps as f64
    }
}

/// One in-place update. Moments and the step counter advance; zero
/// gradients leave parameters bit-identical.
pub fn optimizer_step(
    params: &mut Parameters,
    grads: &Parameters,
    state: &mut OptimizerState,
    cfg: &AdamConfig,
) -> Result<()> {
    if !grads.is_all_finite() {
        return Err(Error::Numeric("non-finite gradient".into()));
    }
    let g = grads.to_flat();
    if g.len() != state.m.len() {
        return Err(Error::Numeric(format!(
            "gradient length {} does not match optimizer state {}",
            g.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let lr = lr_at(cfg, state.step);
    let bc1 = 1.0 - cfg.beta1.powi(state.step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.step as i32);
    let mut off = 0;
    params.for_each_tensor_mut(|_, t| {
        for p in t.data_mut() {
            let gi = g[off];
            let m = &mut state.m[off];
            let v = &mut state.v[off];
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * gi;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * gi * gi;
            let mhat = *m / bc1;
            let vhat = *v / bc2;
            *p -= lr * mhat / (vhat.sqrt() + cfg.eps);
            off += 1;
        }
    });
    debug_assert_eq!(off, g.len());
    Ok(())
}
