use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            step_size: 2.5e-4 * 2.0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-5,
        }
    }
}

/// Bias-corrected first/second moment optimizer state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    config: AdamConfig,
    first: Vec<f64>,
    second: Vec<f64>,
    steps: u64,
}

impl Adam {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        Self {
            config,
            first: vec![0.0; len],
            second: vec![0.0; len],
            steps: 0,
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.first
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.second
    }

    pub fn set_step_size(&mut self, step_size: f64) {
        self.config.step_size = step_size;
    }

    /// Moves `params` against the bias-corrected gradient direction.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != self.first.len() || grad.len() != self.first.len() {
            return Err(Error::DimensionMismatch {
                context: "optimizer step",
                expected: self.first.len(),
                actual: if params.len() != self.first.len() {
                    params.len()
                } else {
                    grad.len()
                },
            });
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradient"));
        }
        self.steps += 1;
        let AdamConfig {
            step_size,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let correction1 = 1.0 - beta1.powi(self.steps as i32);
        let correction2 = 1.0 - beta2.powi(self.steps as i32);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(self.first.iter_mut())
            .zip(self.second.iter_mut())
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            // decaying moments of idle inputs would otherwise go subnormal,
            // which is very slow on common hardware
            if m.abs() < f64::MIN_POSITIVE {
                *m = 0.0;
            }
            if *v < f64::MIN_POSITIVE {
                *v = 0.0;
            }
            let m_hat = *m / correction1;
            let v_hat = *v / correction2;
            *p -= step_size * m_hat / (v_hat.sqrt() + epsilon);
        }
        Ok(())
    }
}
