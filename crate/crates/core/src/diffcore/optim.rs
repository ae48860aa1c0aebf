use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerMethod {
    /// θ ← θ − η·g
    PlainGradient,
    /// Bias-corrected first/second moment recursion (Adam).
    AdaptiveMoment,
}

/// First-order optimizer over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub method: OptimizerMethod,
    pub step_size: f64,
    pub moment_decay_1: f64,
    pub moment_decay_2: f64,
    pub epsilon: f64,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    steps: u64,
}

impl OptimizerState {
    pub fn plain(step_size: f64) -> Self {
        Self::new(OptimizerMethod::PlainGradient, step_size)
    }

    pub fn adam(step_size: f64) -> Self {
        Self::new(OptimizerMethod::AdaptiveMoment, step_size)
    }

    pub fn new(method: OptimizerMethod, step_size: f64) -> Self {
        Self {
            method,
            step_size,
            moment_decay_1: 0.9,
            moment_decay_2: 0.999,
            epsilon: 1e-8,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
            steps: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.steps
    }

    /// Applies one descent step in place. A non-finite gradient leaves
    /// `params` and the moment state untouched.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::ShapeMismatch {
                expected: params.len(),
                actual: grads.len(),
            });
        }
        if let Some(index) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient { index });
        }
        match self.method {
            OptimizerMethod::PlainGradient => {
                for (p, g) in params.iter_mut().zip(grads) {
                    *p -= self.step_size * g;
                }
            }
            OptimizerMethod::AdaptiveMoment => {
                if self.first_moment.len() != params.len() {
                    self.first_moment = vec![0.0; params.len()];
                    self.second_moment = vec![0.0; params.len()];
                    self.steps = 0;
                }
                self.steps += 1;
                let t = self.steps as i32;
                let (b1, b2) = (self.moment_decay_1, self.moment_decay_2);
                let c1 = 1.0 - b1.powi(t);
                let c2 = 1.0 - b2.powi(t);
                for i in 0..params.len() {
                    let g = grads[i];
                    self.first_moment[i] = b1 * self.first_moment[i] + (1.0 - b1) * g;
                    self.second_moment[i] = b2 * self.second_moment[i] + (1.0 - b2) * g * g;
                    let m_hat = self.first_moment[i] / c1;
                    let v_hat = self.second_moment[i] / c2;
                    params[i] -= self.step_size * m_hat / (v_hat.sqrt() + self.epsilon);
                }
                return Ok(());
            }
        }
        self.steps += 1;
        Ok(())
    }
}
