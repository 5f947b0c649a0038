//! Scoring denoisers on held-out mixtures.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{lms_denoise, LmsConfig, LmsError};
use crate::datagen::{synthesize_at, DataError, MixedSample, Segment};
use crate::metrics::{Aggregate, MetricError, MetricsReport, SampleScore};
use crate::model::{separate, IndicatorMode, ModelError, NetworkParams};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{method} returned {got} samples for test sample {index} of length {expected}")]
    Shape {
        method: String,
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("test sample {index}: {source}")]
    Metric { index: usize, source: MetricError },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Lms(#[from] LmsError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Anything that maps a mixture to an estimate of its clean EEG.
pub trait Denoiser: Sync {
    fn name(&self) -> &str;
    fn denoise(&self, sample: &MixedSample) -> Result<Vec<f64>, EvalError>;
}

pub struct NetworkDenoiser<'a> {
    pub params: &'a NetworkParams,
}

impl Denoiser for NetworkDenoiser<'_> {
    fn name(&self) -> &str {
        "deepsep"
    }

    fn denoise(&self, sample: &MixedSample) -> Result<Vec<f64>, EvalError> {
        Ok(separate(self.params, &sample.y, IndicatorMode::Signal)?)
    }
}

/// Adaptive filter fed the true artifact waveform as its reference.
#[derive(Default)]
pub struct LmsDenoiser {
    pub config: LmsConfig,
}

impl Denoiser for LmsDenoiser {
    fn name(&self) -> &str {
        "lms"
    }

    fn denoise(&self, sample: &MixedSample) -> Result<Vec<f64>, EvalError> {
        Ok(lms_denoise(&sample.y, &sample.n, &self.config)?.denoised)
    }
}

/// Returns the mixture untouched.
pub struct IdentityDenoiser;

impl Denoiser for IdentityDenoiser {
    fn name(&self) -> &str {
        "identity"
    }

    fn denoise(&self, sample: &MixedSample) -> Result<Vec<f64>, EvalError> {
        Ok(sample.y.clone())
    }
}

/// Returns the ground truth.
pub struct OracleDenoiser;

impl Denoiser for OracleDenoiser {
    fn name(&self) -> &str {
        "oracle"
    }

    fn denoise(&self, sample: &MixedSample) -> Result<Vec<f64>, EvalError> {
        Ok(sample.x.clone())
    }
}

/// Per-sample scores of `denoiser` against each sample's clean EEG.
pub fn evaluate(
    denoiser: &dyn Denoiser,
    samples: &[MixedSample],
    fs: f64,
) -> Result<MetricsReport, EvalError> {
    let artifact = samples
        .first()
        .map(|s| s.artifact.label())
        .unwrap_or("none");
    let scores: Vec<SampleScore> = samples
        .par_iter()
        .enumerate()
        .map(|(index, s)| {
            let pred = denoiser.denoise(s)?;
            if pred.len() != s.x.len() {
                return Err(EvalError::Shape {
                    method: denoiser.name().to_string(),
                    index,
                    expected: s.x.len(),
                    got: pred.len(),
                });
            }
            SampleScore::compute(index, &pred, &s.x, fs, Some(s.snr_db))
                .map_err(|source| EvalError::Metric { index, source })
        })
        .collect::<Result<_, _>>()?;
    Ok(MetricsReport {
        method: denoiser.name().to_string(),
        artifact: artifact.to_string(),
        scores,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepLevel {
    pub snr_db: i64,
    pub aggregate: Aggregate,
}

/// Scores at each integer SNR, `per_level` fresh mixtures per level.
pub fn snr_sweep(
    denoiser: &dyn Denoiser,
    eeg_pool: &[Segment],
    artifact_pool: &[Segment],
    levels: &[i64],
    per_level: usize,
    seed: u64,
    fs: f64,
) -> Result<Vec<SweepLevel>, EvalError> {
    levels
        .iter()
        .map(|&snr| {
            let level_seed = seed ^ (snr as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
            let samples =
                synthesize_at(eeg_pool, artifact_pool, snr as f64, per_level, level_seed)?;
            Ok(SweepLevel {
                snr_db: snr,
                aggregate: evaluate(denoiser, &samples, fs)?.aggregate(),
            })
        })
        .collect()
}
