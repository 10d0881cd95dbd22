//! Adam with bias correction.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // inherent float methods exist whenever std is linked
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

/// One Adam update of `theta` in place.
pub fn adam_step(theta: &mut [f64], grad: &[f64], state: &mut AdamState, lr: f64, cfg: &AdamConfig) -> Result<()> {
    if theta.len() != grad.len() || state.m.len() != theta.len() {
        return Err(Error::LengthMismatch {
            expected: theta.len(),
            found: grad.len(),
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..theta.len() {
        let g = grad[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        theta[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}
