//! First-order optimizers operating in place on flat parameter vectors.

use crate::error::{check_len, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
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

#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(num_params: usize, config: AdamConfig) -> Self {
        AdamState {
            config,
            step: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }

    pub fn with_lr(num_params: usize, lr: f64) -> Self {
        AdamState::new(num_params, AdamConfig { lr, ..AdamConfig::default() })
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update of `theta` in place.
    pub fn step(&mut self, theta: &mut [f64], grad: &[f64]) -> Result<()> {
        check_len("adam_step theta", self.m.len(), theta.len())?;
        check_len("adam_step grad", theta.len(), grad.len())?;
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for i in 0..theta.len() {
            let g = grad[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            theta[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// Functional form: returns the updated parameters and leaves the input untouched.
pub fn adam_step(state: &mut AdamState, theta: &[f64], grad: &[f64]) -> Result<Vec<f64>> {
    let mut out = theta.to_vec();
    state.step(&mut out, grad)?;
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct RmsPropState {
    pub lr: f64,
    pub decay: f64,
    pub eps: f64,
    sq: Vec<f64>,
}

impl RmsPropState {
    pub fn new(num_params: usize) -> Self {
        RmsPropState::with_lr(num_params, 1e-4)
    }

    pub fn with_lr(num_params: usize, lr: f64) -> Self {
        RmsPropState {
            lr,
            decay: 0.99,
            eps: 1e-8,
            sq: vec![0.0; num_params],
        }
    }

    pub fn step(&mut self, theta: &mut [f64], grad: &[f64]) -> Result<()> {
        check_len("rmsprop theta", self.sq.len(), theta.len())?;
        check_len("rmsprop grad", theta.len(), grad.len())?;
        for i in 0..theta.len() {
            self.sq[i] = self.decay * self.sq[i] + (1.0 - self.decay) * grad[i] * grad[i];
            theta[i] -= self.lr * grad[i] / (self.sq[i].sqrt() + self.eps);
        }
        Ok(())
    }
}
