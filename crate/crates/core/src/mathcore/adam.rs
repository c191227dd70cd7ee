use serde::{Deserialize, Serialize};

use super::Parameters;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

/// Moment buffers for one parameter set.
#[derive(Debug, Clone)]
pub struct AdamState {
    config: AdamConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new<P: Parameters>(params: &P, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = params.slices().iter().map(|s| vec![0.0; s.len()]).collect();
        Self {
            config,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    /// One bias-corrected Adam update. Gradients are validated before any
    /// parameter is touched, so a rejected step leaves everything unchanged.
    pub fn step<P: Parameters>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let grad_slices = grads.slices();
        if grad_slices.len() != self.first.len()
            || grad_slices.iter().zip(&self.first).any(|(g, m)| g.len() != m.len())
        {
            return Err(Error::InvalidArgument(
                "gradient shapes do not match optimizer state".into(),
            ));
        }
        if grad_slices.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("gradient".into()));
        }
        let mut param_slices = params.slices_mut();
        if param_slices.len() != self.first.len()
            || param_slices.iter().zip(&self.first).any(|(p, m)| p.len() != m.len())
        {
            return Err(Error::InvalidArgument(
                "parameter shapes do not match optimizer state".into(),
            ));
        }

        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (k, p) in param_slices.iter_mut().enumerate() {
            let (m, v, g) = (&mut self.first[k], &mut self.second[k], grad_slices[k]);
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}
