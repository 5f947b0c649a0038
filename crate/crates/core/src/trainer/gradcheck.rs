//! Central finite-difference check of every network parameter.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{case_gradients, case_loss, TrainError};
use crate::datagen::{item_rng, CaseKind};
use crate::model::{ArchConfig, IndicatorMode, NetworkParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradcheckOptions {
    pub step: f64,
    /// Entries whose analytic and numeric gradients are both at most this in
    /// magnitude (dead ReLU paths) are left out of the relative-error
    /// statistics.
    pub abs_floor: f64,
    pub tolerance: f64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            abs_floor: 1e-8,
            tolerance: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorCheck {
    pub name: String,
    pub len: usize,
    /// Entries with a gradient above the absolute floor.
    pub compared: usize,
    pub max_rel: f64,
    pub mean_rel: f64,
    pub max_abs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub mode: IndicatorMode,
    pub case: Option<CaseKind>,
    pub options: GradcheckOptions,
    pub loss: f64,
    pub tensors: Vec<TensorCheck>,
    pub max_rel: f64,
    pub mean_rel: f64,
    pub compared: usize,
    pub skipped: usize,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel <= self.options.tolerance && self.loss.is_finite()
    }
}

/// Compares the analytic gradient of `mse(net(input), target)` with central
/// differences over every parameter.
pub fn gradcheck(
    params: &NetworkParams,
    input: &[f64],
    target: &[f64],
    mode: IndicatorMode,
    options: GradcheckOptions,
) -> Result<GradcheckReport, TrainError> {
    let (loss, analytic) = case_gradients(params, input, target, mode)?;
    let names: Vec<String> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
    let mut probe = params.clone();
    let mut tensors = Vec::with_capacity(names.len());
    let (mut sum_rel, mut compared, mut skipped, mut max_rel) = (0.0, 0usize, 0usize, 0.0f64);

    for (ti, name) in names.into_iter().enumerate() {
        let len = analytic[ti].len();
        let mut check = TensorCheck {
            name,
            len,
            compared: 0,
            max_rel: 0.0,
            mean_rel: 0.0,
            max_abs: 0.0,
        };
        let mut tensor_sum = 0.0;
        for j in 0..len {
            let original = probe.tensors_mut()[ti].data()[j];
            probe.tensors_mut()[ti].data_mut()[j] = original + options.step;
            let plus = case_loss(&probe, input, target, mode)?;
            probe.tensors_mut()[ti].data_mut()[j] = original - options.step;
            let minus = case_loss(&probe, input, target, mode)?;
            probe.tensors_mut()[ti].data_mut()[j] = original;

            let numeric = (plus - minus) / (2.0 * options.step);
            let a = analytic[ti][j];
            let abs = (a - numeric).abs();
            check.max_abs = check.max_abs.max(abs);
            let scale = a.abs().max(numeric.abs());
            if scale <= options.abs_floor {
                skipped += 1;
                continue;
            }
            let rel = abs / scale;
            check.compared += 1;
            check.max_rel = check.max_rel.max(rel);
            tensor_sum += rel;
        }
        if check.compared > 0 {
            check.mean_rel = tensor_sum / check.compared as f64;
        }
        compared += check.compared;
        sum_rel += tensor_sum;
        max_rel = max_rel.max(check.max_rel);
        tensors.push(check);
    }

    Ok(GradcheckReport {
        mode,
        case: None,
        options,
        loss,
        tensors,
        max_rel,
        mean_rel: if compared > 0 {
            sum_rel / compared as f64
        } else {
            0.0
        },
        compared,
        skipped,
    })
}

/// Runs [`gradcheck`] on one random sample of each training case with a
/// freshly initialized network of the given architecture.
pub fn gradcheck_cases(
    arch: ArchConfig,
    len: usize,
    seed: u64,
    options: GradcheckOptions,
) -> Result<Vec<GradcheckReport>, TrainError> {
    let params = NetworkParams::init(arch, seed)?;
    let mut rng = item_rng(seed, 1);
    let smooth = |rng: &mut rand_chacha::ChaCha8Rng, cycles: f64| -> Vec<f64> {
        let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        (0..len)
            .map(|i| {
                (cycles * std::f64::consts::TAU * i as f64 / len as f64 + phase).sin()
                    + rng.gen_range(-0.3..0.3)
            })
            .collect()
    };
    let clean = smooth(&mut rng, 3.0);
    let artifact: Vec<f64> = smooth(&mut rng, 0.7).iter().map(|v| 1.5 * v).collect();
    let raw: Vec<f64> = clean.iter().zip(&artifact).map(|(a, b)| a + b).collect();

    CaseKind::ALL
        .iter()
        .map(|&kind| {
            let (input, target) = match kind {
                CaseKind::RawToClean => (&raw, &clean),
                CaseKind::CleanToClean => (&clean, &clean),
                CaseKind::ArtifactToArtifact => (&artifact, &artifact),
            };
            let mut report = gradcheck(&params, input, target, kind.mode(), options)?;
            report.case = Some(kind);
            Ok(report)
        })
        .collect()
}
