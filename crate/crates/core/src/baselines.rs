//! Reference-based LMS adaptive noise cancellation.
//!
//! At every sample the filter predicts the artifact from the last `M`
//! reference samples, `a_t = w·u_t`, outputs the residual `e_t = y_t − a_t`
//! and adapts `w ← w + 2μ·e_t·u_t`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LmsError {
    #[error("reference length {reference} differs from signal length {signal}")]
    LengthMismatch { signal: usize, reference: usize },
    #[error("filter order {order} must be between 1 and the signal length {len}")]
    Order { order: usize, len: usize },
    #[error("step size must be finite and non-negative, got {0}")]
    StepSize(f64),
    #[error(
        "filter diverged at sample {sample} (|w| = {norm:.3e}); try a smaller step size than {mu}"
    )]
    Diverged { sample: usize, norm: f64, mu: f64 },
}

/// How the reference is conditioned before filtering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferencePolicy {
    /// Scale the reference to unit mean power.
    #[default]
    UnitPower,
    /// Use the reference as given.
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmsConfig {
    pub order: usize,
    pub mu: f64,
    pub reference: ReferencePolicy,
    /// Weight-norm bound beyond which the run counts as diverged.
    pub divergence_bound: f64,
}

impl Default for LmsConfig {
    fn default() -> Self {
        Self {
            order: 8,
            mu: 0.01,
            reference: ReferencePolicy::UnitPower,
            divergence_bound: 1e6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmsOutput {
    /// Residual `e`, the cleaned signal.
    pub denoised: Vec<f64>,
    /// Filter output `a`; `denoised + artifact` equals `y` up to one rounding.
    pub artifact: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Runs the filter from zero weights.
pub fn lms_denoise(y: &[f64], reference: &[f64], cfg: &LmsConfig) -> Result<LmsOutput, LmsError> {
    lms_denoise_from(y, reference, cfg, vec![0.0; cfg.order])
}

/// Runs the filter from the given initial weights.
pub fn lms_denoise_from(
    y: &[f64],
    reference: &[f64],
    cfg: &LmsConfig,
    mut w: Vec<f64>,
) -> Result<LmsOutput, LmsError> {
    if y.len() != reference.len() {
        return Err(LmsError::LengthMismatch {
            signal: y.len(),
            reference: reference.len(),
        });
    }
    if cfg.order == 0 || cfg.order > y.len() || w.len() != cfg.order {
        return Err(LmsError::Order {
            order: cfg.order,
            len: y.len(),
        });
    }
    if !cfg.mu.is_finite() || cfg.mu < 0.0 {
        return Err(LmsError::StepSize(cfg.mu));
    }
    let u: Vec<f64> = match cfg.reference {
        ReferencePolicy::Raw => reference.to_vec(),
        ReferencePolicy::UnitPower => {
            let p = reference.iter().map(|v| v * v).sum::<f64>() / reference.len() as f64;
            if p > 0.0 {
                let s = p.sqrt();
                reference.iter().map(|v| v / s).collect()
            } else {
                reference.to_vec()
            }
        }
    };
    let mut denoised = Vec::with_capacity(y.len());
    let mut artifact = Vec::with_capacity(y.len());
    for t in 0..y.len() {
        // Tap j sees u[t - j]; taps before the start read zero.
        let taps = (0..cfg.order).map(|j| if t >= j { u[t - j] } else { 0.0 });
        let a: f64 = w.iter().zip(taps.clone()).map(|(wi, ui)| wi * ui).sum();
        let e = y[t] - a;
        for (wi, ui) in w.iter_mut().zip(taps) {
            *wi += 2.0 * cfg.mu * e * ui;
        }
        let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || norm > cfg.divergence_bound {
            return Err(LmsError::Diverged {
                sample: t,
                norm,
                mu: cfg.mu,
            });
        }
        denoised.push(e);
        artifact.push(a);
    }
    Ok(LmsOutput {
        denoised,
        artifact,
        weights: w,
    })
}
