use serde::{Deserialize, Serialize};

use super::{AutodiffError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
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

/// Adaptive-moment optimizer state: one first/second moment buffer per
/// parameter tensor, in the order the parameters are handed to [`AdamState::step`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let (m, v) = params
            .into_iter()
            .map(|p| (vec![0.0; p.len()], vec![0.0; p.len()]))
            .unzip();
        Self { config, t: 0, m, v }
    }

    /// Rebuilds a state from saved moments (checkpoint resume).
    pub fn from_parts(
        config: AdamConfig,
        t: u64,
        m: Vec<Vec<f64>>,
        v: Vec<Vec<f64>>,
    ) -> Result<Self, AutodiffError> {
        if m.len() != v.len() || m.iter().zip(&v).any(|(a, b)| a.len() != b.len()) {
            return Err(AutodiffError::OptimizerLayout);
        }
        Ok(Self { config, t, m, v })
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Vec<f64>] {
        &self.v
    }

    pub(crate) fn moments_mut(&mut self) -> (&mut [Vec<f64>], &mut [Vec<f64>]) {
        (&mut self.m, &mut self.v)
    }

    /// One bias-corrected update of every parameter, then zeroes the grads.
    ///
    /// Fails without touching anything if a parameter lacks a gradient or the
    /// parameter list does not match the moment buffers.
    pub fn step(&mut self, params: &mut [&mut Tensor]) -> Result<(), AutodiffError> {
        if params.len() != self.m.len() {
            return Err(AutodiffError::OptimizerLayout);
        }
        for (i, p) in params.iter().enumerate() {
            if p.grad().is_none() {
                return Err(AutodiffError::MissingGrad(i));
            }
            if p.len() != self.m[i].len() {
                return Err(AutodiffError::OptimizerLayout);
            }
        }

        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);

        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let g = p.grad().expect("checked above").to_vec();
            let data = p.data_mut();
            for j in 0..data.len() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                data[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            p.zero_grad();
        }
        Ok(())
    }
}
