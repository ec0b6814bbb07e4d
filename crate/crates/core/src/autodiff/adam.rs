use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tape::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for a single parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Matrix,
    pub v: Matrix,
    pub t: u64,
}

impl AdamState {
    pub fn new(shape: (usize, usize)) -> Self {
        Self {
            m: Matrix::zeros(shape.0, shape.1),
            v: Matrix::zeros(shape.0, shape.1),
            t: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    states: Vec<AdamState>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let states = store.iter().map(|p| AdamState::new(p.value.shape())).collect();
        Self { config, states }
    }

    pub fn states(&self) -> &[AdamState] {
        &self.states
    }

    /// One bias-corrected Adam update of every parameter from its current
    /// gradient. Gradients are left untouched.
    pub fn step(&mut self, store: &mut ParamStore) {
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        for (p, s) in store.iter_mut().zip(self.states.iter_mut()) {
            s.t += 1;
            let bc1 = 1.0 - beta1.powi(s.t as i32);
            let bc2 = 1.0 - beta2.powi(s.t as i32);
            for k in 0..p.value.len() {
                let g = p.grad[k];
                s.m[k] = beta1 * s.m[k] + (1.0 - beta1) * g;
                s.v[k] = beta2 * s.v[k] + (1.0 - beta2) * g * g;
                let m_hat = s.m[k] / bc1;
                let v_hat = s.v[k] / bc2;
                p.value[k] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}
