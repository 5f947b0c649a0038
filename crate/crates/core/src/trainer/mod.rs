//! Supervised training on the three input/target cases.
//!
//! Every case is standardized by the standard deviation of its input (target
//! divided by the same factor) and the loss is the MSE in that frame. A batch
//! holds cases of one indicator mode only. Samples of a batch run as separate
//! graphs, possibly on several threads; their gradients are summed in sample
//! order, so results do not depend on the thread count.
//!
//! Parameters and optimizer moments are rounded to `f32` at every checkpoint
//! epoch, whether or not a checkpoint is written, so a run resumed from a
//! checkpoint file follows the uninterrupted run exactly.

mod checkpoint;
mod eval;
mod gradcheck;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, CHECKPOINT_FORMAT,
};
pub use eval::{
    evaluate, snr_sweep, Denoiser, EvalError, IdentityDenoiser, LmsDenoiser, NetworkDenoiser,
    OracleDenoiser, SweepLevel,
};
pub use gradcheck::{gradcheck, gradcheck_cases, GradcheckOptions, GradcheckReport, TensorCheck};

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AdamConfig, AdamState, AutodiffError, Graph, Tensor};
use crate::datagen::{item_rng, CaseKind, DataError, MixRatios, TrainingCase};
use crate::model::{
    forward, forward_graph, segment_scale, IndicatorMode, ModelError, NetworkParams,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("no training cases")]
    NoData,
    #[error("training case {index} has input length {input} but target length {target}")]
    CaseShape {
        index: usize,
        input: usize,
        target: usize,
    },
    #[error(
        "non-finite {what} at epoch {epoch}, batch {batch} ({mode:?} mode, cases {cases}); \
         first offending training case #{case_index} ({case:?})"
    )]
    NonFinite {
        what: &'static str,
        epoch: usize,
        batch: usize,
        mode: IndicatorMode,
        cases: String,
        case_index: usize,
        case: CaseKind,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub mix_ratios: MixRatios,
    /// Checkpoint (and `f32` rounding) every this many epochs; 0 disables.
    pub checkpoint_every: usize,
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            lr: 1e-3,
            seed: 0,
            mix_ratios: MixRatios::default(),
            checkpoint_every: 10,
            validation_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch size must be at least 1".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(TrainError::Config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if !(0.0..=0.5).contains(&self.validation_fraction) {
            return Err(TrainError::Config(format!(
                "validation fraction must lie in [0, 0.5], got {}",
                self.validation_fraction
            )));
        }
        self.mix_ratios.validate()?;
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }
}

/// Losses of one epoch. Case losses are means over the training cases of
/// that kind seen in the epoch, `None` if there were none.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub case_loss: [Option<f64>; 3],
    pub case_count: [usize; 3],
    /// Not persisted, so checkpoints of identical runs are identical.
    #[serde(skip)]
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl TrainLog {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn first_train_loss(&self) -> Option<f64> {
        self.epochs.first().map(|e| e.train_loss)
    }

    pub fn last_train_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.train_loss)
    }

    /// Loss columns only, one row per epoch; identical across identical runs.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), TrainError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "epoch",
            "train_loss",
            "val_loss",
            "raw_to_clean_loss",
            "clean_to_clean_loss",
            "artifact_to_artifact_loss",
            "raw_to_clean_n",
            "clean_to_clean_n",
            "artifact_to_artifact_n",
        ])?;
        for e in &self.epochs {
            out.write_record([
                e.epoch.to_string(),
                e.train_loss.to_string(),
                opt(e.val_loss),
                opt(e.case_loss[0]),
                opt(e.case_loss[1]),
                opt(e.case_loss[2]),
                e.case_count[0].to_string(),
                e.case_count[1].to_string(),
                e.case_count[2].to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Wall-clock seconds per epoch.
    pub fn write_timing_csv<W: Write>(&self, w: W) -> Result<(), TrainError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["epoch", "wall_seconds"])?;
        for e in &self.epochs {
            out.write_record([e.epoch.to_string(), format!("{:.3}", e.wall_seconds)])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// A case in its standardized frame.
#[derive(Debug, Clone)]
struct Prepared {
    input: Vec<f64>,
    target: Vec<f64>,
    kind: CaseKind,
}

fn prepare(cases: &[TrainingCase]) -> Result<Vec<Prepared>, TrainError> {
    cases
        .iter()
        .enumerate()
        .map(|(index, c)| {
            if c.input.len() != c.target.len() {
                return Err(TrainError::CaseShape {
                    index,
                    input: c.input.len(),
                    target: c.target.len(),
                });
            }
            let s = segment_scale(&c.input);
            Ok(Prepared {
                input: c.input.iter().map(|v| v / s).collect(),
                target: c.target.iter().map(|v| v / s).collect(),
                kind: c.kind,
            })
        })
        .collect()
}

/// `(train, validation)` case indices.
pub fn split_validation(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut item_rng(seed ^ 0x5641_4c49_4454, 0));
    let n_val = ((n as f64) * fraction).round() as usize;
    let n_val = n_val.min(n.saturating_sub(1));
    let val = idx[..n_val].to_vec();
    let mut train = idx[n_val..].to_vec();
    train.sort_unstable();
    (train, val)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub mode: IndicatorMode,
    pub items: Vec<usize>,
}

/// Shuffled single-mode batches for one epoch.
pub fn epoch_batches(
    train: &[usize],
    kinds: &[CaseKind],
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> Vec<Batch> {
    let mut rng = item_rng(seed ^ 0x4550_4f43_48, epoch as u64);
    let mut order = train.to_vec();
    order.shuffle(&mut rng);
    let mut batches = Vec::new();
    for mode in [IndicatorMode::Signal, IndicatorMode::Artifact] {
        let of_mode: Vec<usize> = order
            .iter()
            .copied()
            .filter(|&i| kinds[i].mode() == mode)
            .collect();
        for chunk in of_mode.chunks(batch_size.max(1)) {
            batches.push(Batch {
                mode,
                items: chunk.to_vec(),
            });
        }
    }
    batches.shuffle(&mut rng);
    for b in &batches {
        assert!(
            b.items.iter().all(|&i| kinds[i].mode() == b.mode),
            "batch mixes indicator modes"
        );
    }
    batches
}

/// Loss and parameter gradients of one standardized case.
fn case_gradients(
    params: &NetworkParams,
    input: &[f64],
    target: &[f64],
    mode: IndicatorMode,
) -> Result<(f64, Vec<Vec<f64>>), TrainError> {
    let mut g = Graph::new();
    let bound = params.bind(&mut g, true);
    let x = g.input(Tensor::from_signal(input));
    let t = g.input(Tensor::from_signal(target));
    let nodes = forward_graph(&mut g, x, &bound, mode)?;
    let loss = g.mse_loss(nodes.output, t)?;
    let value = g.value(loss).item();
    if !value.is_finite() {
        return Ok((value, Vec::new()));
    }
    g.backward(loss)?;
    Ok((value, bound.grads(&g)))
}

/// MSE of the network output against `target`, no gradients.
pub fn case_loss(
    params: &NetworkParams,
    input: &[f64],
    target: &[f64],
    mode: IndicatorMode,
) -> Result<f64, TrainError> {
    let out = forward(&Tensor::from_signal(input), params, mode)?.output;
    let n = target.len() as f64;
    Ok(out
        .data()
        .iter()
        .zip(target)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n)
}

fn snap_to_f32(values: &mut [f64]) {
    values.iter_mut().for_each(|v| *v = *v as f32 as f64);
}

pub struct Trainer {
    pub params: NetworkParams,
    pub config: TrainConfig,
    adam: AdamState,
    log: TrainLog,
}

impl Trainer {
    pub fn new(params: NetworkParams, config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let adam = AdamState::new(
            config.adam(),
            params.named_tensors().into_iter().map(|(_, t)| t),
        );
        Ok(Self {
            params,
            config,
            adam,
            log: TrainLog::default(),
        })
    }

    /// Continues from a checkpoint; `config.epochs` is the total to reach.
    pub fn resume(checkpoint: &Path, config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let ck = load_checkpoint(checkpoint)?;
        Ok(Self {
            params: ck.params,
            config,
            adam: ck.adam,
            log: ck.meta.log,
        })
    }

    pub fn log(&self) -> &TrainLog {
        &self.log
    }

    pub fn adam(&self) -> &AdamState {
        &self.adam
    }

    pub fn completed_epochs(&self) -> usize {
        self.log.len()
    }

    pub fn into_parts(self) -> (NetworkParams, TrainLog) {
        (self.params, self.log)
    }

    fn snap(&mut self) {
        for t in self.params.tensors_mut() {
            snap_to_f32(t.data_mut());
        }
        let (m, v) = self.adam.moments_mut();
        for buf in m.iter_mut().chain(v.iter_mut()) {
            snap_to_f32(buf);
        }
    }

    /// Trains until `config.epochs` epochs are complete. Checkpoints go to
    /// `checkpoint_dir` when given; `on_epoch` sees every finished epoch.
    pub fn run(
        &mut self,
        cases: &[TrainingCase],
        checkpoint_dir: Option<&Path>,
        mut on_epoch: impl FnMut(&EpochRecord),
    ) -> Result<Vec<PathBuf>, TrainError> {
        if cases.is_empty() {
            return Err(TrainError::NoData);
        }
        let data = prepare(cases)?;
        let kinds: Vec<CaseKind> = data.iter().map(|c| c.kind).collect();
        let (train_idx, val_idx) = split_validation(
            data.len(),
            self.config.validation_fraction,
            self.config.seed,
        );
        let mut written = Vec::new();

        for epoch in self.completed_epochs() + 1..=self.config.epochs {
            let started = Instant::now();
            let mut case_sum = [0.0f64; 3];
            let mut case_count = [0usize; 3];
            let batches = epoch_batches(
                &train_idx,
                &kinds,
                self.config.batch_size,
                self.config.seed,
                epoch,
            );

            for (bi, batch) in batches.iter().enumerate() {
                let results: Vec<(f64, Vec<Vec<f64>>)> = batch
                    .items
                    .par_iter()
                    .map(|&i| {
                        case_gradients(&self.params, &data[i].input, &data[i].target, batch.mode)
                    })
                    .collect::<Result<_, _>>()?;

                let non_finite = |what, pos: usize| {
                    let mut counts = [0usize; 3];
                    for &i in &batch.items {
                        counts[kinds[i] as usize] += 1;
                    }
                    TrainError::NonFinite {
                        what,
                        epoch,
                        batch: bi + 1,
                        mode: batch.mode,
                        cases: format!(
                            "raw->clean {}, clean->clean {}, artifact->artifact {}",
                            counts[0], counts[1], counts[2]
                        ),
                        case_index: batch.items[pos],
                        case: kinds[batch.items[pos]],
                    }
                };
                if let Some(pos) = results.iter().position(|(l, _)| !l.is_finite()) {
                    return Err(non_finite("loss", pos));
                }
                if let Some(pos) = results
                    .iter()
                    .position(|(_, g)| g.iter().flatten().any(|v| !v.is_finite()))
                {
                    return Err(non_finite("gradient", pos));
                }

                let inv = 1.0 / batch.items.len() as f64;
                let mut tensors = self.params.tensors_mut();
                for (ti, t) in tensors.iter_mut().enumerate() {
                    let mut grad = vec![0.0; t.len()];
                    for (_, g) in &results {
                        for (acc, v) in grad.iter_mut().zip(&g[ti]) {
                            *acc += v;
                        }
                    }
                    grad.iter_mut().for_each(|v| *v *= inv);
                    t.clear_grad();
                    t.accumulate_grad(&grad)?;
                }
                self.adam.step(&mut tensors)?;
                tensors.iter_mut().for_each(|t| t.clear_grad());

                for (&i, (l, _)) in batch.items.iter().zip(&results) {
                    let k = kinds[i] as usize;
                    case_sum[k] += l;
                    case_count[k] += 1;
                }
            }

            let seen: usize = case_count.iter().sum();
            let train_loss = case_sum.iter().sum::<f64>() / seen as f64;
            let val_loss = if val_idx.is_empty() {
                None
            } else {
                let losses: Vec<f64> = val_idx
                    .par_iter()
                    .map(|&i| {
                        case_loss(
                            &self.params,
                            &data[i].input,
                            &data[i].target,
                            kinds[i].mode(),
                        )
                    })
                    .collect::<Result<_, _>>()?;
                Some(losses.iter().sum::<f64>() / losses.len() as f64)
            };
            let mut case_loss = [None; 3];
            for k in 0..3 {
                if case_count[k] > 0 {
                    case_loss[k] = Some(case_sum[k] / case_count[k] as f64);
                }
            }
            let record = EpochRecord {
                epoch,
                train_loss,
                val_loss,
                case_loss,
                case_count,
                wall_seconds: started.elapsed().as_secs_f64(),
            };
            self.log.epochs.push(record.clone());

            if self.config.checkpoint_every > 0 && epoch % self.config.checkpoint_every == 0 {
                self.snap();
                if let Some(dir) = checkpoint_dir {
                    written.push(save_checkpoint(dir, self)?);
                }
            }
            on_epoch(&record);
        }
        Ok(written)
    }
}

/// Trains a fresh optimizer on `cases` from `params`.
pub fn train(
    params: NetworkParams,
    cases: &[TrainingCase],
    config: TrainConfig,
) -> Result<(NetworkParams, TrainLog), TrainError> {
    let mut t = Trainer::new(params, config)?;
    t.run(cases, None, |_| {})?;
    Ok(t.into_parts())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{
        make_training_cases, simulate::simulate_pool, simulate::SimConfig, synthesize, SegmentKind,
        DEFAULT_SNR_RANGE,
    };
    use crate::model::ArchConfig;

    fn small_cases(n: usize, len: usize, seed: u64) -> Vec<TrainingCase> {
        let cfg = SimConfig {
            segment_len: len,
            fs: 256.0,
        };
        let eeg = simulate_pool(SegmentKind::CleanEeg, 20, cfg, seed);
        let eog = simulate_pool(SegmentKind::Eog, 20, cfg, seed);
        let mixed = synthesize(&eeg, &eog, DEFAULT_SNR_RANGE, n, seed).unwrap();
        make_training_cases(&mixed, &eeg, &eog, MixRatios::default(), seed).unwrap()
    }

    fn quick_config(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 4,
            lr: 3e-3,
            seed: 5,
            checkpoint_every: 2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_signal_trains_at_zero_loss() {
        let case = TrainingCase {
            input: vec![0.0; 64],
            target: vec![0.0; 64],
            kind: CaseKind::CleanToClean,
        };
        let p = NetworkParams::init(ArchConfig::tiny(), 1).unwrap();
        let (after, log) = train(
            p.clone(),
            &[case],
            TrainConfig {
                epochs: 1,
                ..quick_config(1)
            },
        )
        .unwrap();
        assert_eq!(log.len(), 1);
        assert_eq!(log.epochs[0].train_loss, 0.0);
        assert_eq!(after, p);
    }

    #[test]
    fn batches_never_mix_modes_and_cover_the_epoch() {
        let cases = small_cases(100, 32, 1);
        let kinds: Vec<CaseKind> = cases.iter().map(|c| c.kind).collect();
        let (train_idx, val_idx) = split_validation(cases.len(), 0.1, 3);
        assert_eq!(val_idx.len(), 10);
        let batches = epoch_batches(&train_idx, &kinds, 8, 3, 1);
        let mut seen: Vec<usize> = batches.iter().flat_map(|b| b.items.clone()).collect();
        seen.sort_unstable();
        assert_eq!(seen, train_idx);
        for b in &batches {
            assert!(b.items.len() <= 8);
            assert!(b.items.iter().all(|&i| kinds[i].mode() == b.mode));
        }
        assert_ne!(batches, epoch_batches(&train_idx, &kinds, 8, 3, 2));
    }

    #[test]
    fn identical_seeds_give_identical_logs() {
        let cases = small_cases(24, 32, 2);
        let p = NetworkParams::init(ArchConfig::tiny(), 3).unwrap();
        let (pa, la) = train(p.clone(), &cases, quick_config(3)).unwrap();
        let (pb, lb) = train(p, &cases, quick_config(3)).unwrap();
        assert_eq!(pa, pb);
        let strip = |l: &TrainLog| {
            let mut b = Vec::new();
            l.write_csv(&mut b).unwrap();
            b
        };
        assert_eq!(strip(&la), strip(&lb));
        assert_eq!(la.len(), 3);
    }

    #[test]
    fn loss_decreases_on_a_small_problem() {
        let cases = small_cases(48, 64, 4);
        let p = NetworkParams::init(ArchConfig::tiny(), 4).unwrap();
        let (_, log) = train(
            p,
            &cases,
            TrainConfig {
                epochs: 8,
                ..quick_config(8)
            },
        )
        .unwrap();
        assert!(log.last_train_loss().unwrap() < log.first_train_loss().unwrap());
    }

    #[test]
    fn resume_reproduces_the_uninterrupted_trace() {
        let dir = tempfile::tempdir().unwrap();
        let cases = small_cases(24, 32, 6);
        let p = NetworkParams::init(ArchConfig::tiny(), 6).unwrap();
        let cfg = quick_config(4);

        let mut full = Trainer::new(p.clone(), cfg).unwrap();
        full.run(&cases, None, |_| {}).unwrap();

        let mut first = Trainer::new(p, TrainConfig { epochs: 2, ..cfg }).unwrap();
        let written = first.run(&cases, Some(dir.path()), |_| {}).unwrap();
        assert_eq!(written.len(), 1);
        let mut resumed = Trainer::resume(&written[0], cfg).unwrap();
        assert_eq!(resumed.completed_epochs(), 2);
        resumed.run(&cases, None, |_| {}).unwrap();

        let losses = |t: &Trainer| {
            t.log()
                .epochs
                .iter()
                .map(|e| (e.train_loss, e.val_loss))
                .collect::<Vec<_>>()
        };
        assert_eq!(losses(&full), losses(&resumed));
        assert_eq!(full.params, resumed.params);
    }

    #[test]
    fn non_finite_loss_aborts_with_context() {
        let case = TrainingCase {
            input: vec![1.0; 32],
            target: vec![f64::NAN; 32],
            kind: CaseKind::RawToClean,
        };
        let p = NetworkParams::init(ArchConfig::tiny(), 1).unwrap();
        let err = train(p, &[case], quick_config(1)).unwrap_err();
        let msg = err.to_string();
        assert!(
            matches!(
                err,
                TrainError::NonFinite {
                    epoch: 1,
                    batch: 1,
                    ..
                }
            ),
            "{msg}"
        );
        assert!(msg.contains("RawToClean"));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            validation_fraction: 0.6,
            ..TrainConfig::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }
}
