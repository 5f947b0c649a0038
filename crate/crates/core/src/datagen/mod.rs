//! Semi-synthetic contaminated EEG.
//!
//! A contaminated segment is `y = x + λ·n` where `x` is clean EEG, `n` an
//! artifact and `λ` is chosen so that
//! `SNR = 10·log10(rms(x) / rms(λ·n))` hits a target in decibels.
//!
//! Training draws from three cases: contaminated input to clean target
//! (signal mode), clean to clean (signal mode) and artifact to artifact
//! (artifact mode).

mod esg;
pub mod simulate;

pub use esg::{
    load_segments, read_segments, save_segments, write_segments, Manifest, SampleMeta, SegmentFile,
};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::IndicatorMode;

/// Samples per segment (2 s at 256 Hz).
pub const DEFAULT_SEGMENT_LEN: usize = 512;
pub const DEFAULT_FS: f64 = 256.0;
pub const DEFAULT_SNR_RANGE: SnrRange = SnrRange {
    min: -7.0,
    max: 2.0,
};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("rms of an empty sequence")]
    Empty,
    #[error("artifact segment has zero rms and cannot be scaled to a target snr")]
    ZeroRms,
    #[error("{0} pool is empty")]
    EmptyPool(&'static str),
    #[error("segment lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid snr range [{min}, {max}]")]
    InvalidRange { min: f64, max: f64 },
    #[error("invalid mix ratios {0:?}: need three finite non-negative values summing to 1")]
    InvalidRatios([f64; 3]),
    #[error("segment file: bad magic {0:?}, expected \"ESG1\"")]
    BadMagic([u8; 4]),
    #[error("segment file truncated: header promises {expected} bytes of samples, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("segment file: {0} trailing bytes after the last segment")]
    TrailingBytes(usize),
    #[error("segment file too short for its header")]
    ShortHeader,
    #[error("segment {index} has length {got}, file length is {expected}")]
    RaggedSegments {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("non-finite value in segment {0}")]
    NonFinite(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("manifest: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentKind {
    #[serde(rename = "eeg")]
    CleanEeg,
    Eog,
    Emg,
}

impl SegmentKind {
    pub fn label(self) -> &'static str {
        match self {
            SegmentKind::CleanEeg => "eeg",
            SegmentKind::Eog => "eog",
            SegmentKind::Emg => "emg",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "eeg" | "clean" => Some(SegmentKind::CleanEeg),
            "eog" => Some(SegmentKind::Eog),
            "emg" => Some(SegmentKind::Emg),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub samples: Vec<f64>,
    pub kind: SegmentKind,
    pub source_index: usize,
}

impl Segment {
    pub fn new(samples: Vec<f64>, kind: SegmentKind, source_index: usize) -> Self {
        Self {
            samples,
            kind,
            source_index,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Wraps raw sample vectors as a pool of one kind, indexed in order.
pub fn pool_from(data: Vec<Vec<f64>>, kind: SegmentKind) -> Vec<Segment> {
    data.into_iter()
        .enumerate()
        .map(|(i, s)| Segment::new(s, kind, i))
        .collect()
}

/// One contaminated segment with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedSample {
    /// `x + λ·n`.
    pub y: Vec<f64>,
    pub x: Vec<f64>,
    /// Unscaled artifact.
    pub n: Vec<f64>,
    pub lambda: f64,
    pub snr_db: f64,
    pub artifact: SegmentKind,
    pub eeg_index: usize,
    pub artifact_index: usize,
}

impl MixedSample {
    /// The artifact as it appears in `y`.
    pub fn scaled_artifact(&self) -> Vec<f64> {
        self.n.iter().map(|v| self.lambda * v).collect()
    }

    pub fn meta(&self) -> SampleMeta {
        SampleMeta {
            lambda: self.lambda,
            snr_db: self.snr_db,
            artifact: self.artifact,
            eeg_index: self.eeg_index,
            artifact_index: self.artifact_index,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrRange {
    pub min: f64,
    pub max: f64,
}

impl SnrRange {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.min.is_finite() && self.max.is_finite() && self.min <= self.max {
            Ok(())
        } else {
            Err(DataError::InvalidRange {
                min: self.min,
                max: self.max,
            })
        }
    }
}

pub fn rms(x: &[f64]) -> Result<f64, DataError> {
    if x.is_empty() {
        return Err(DataError::Empty);
    }
    Ok((x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt())
}

/// `10·log10(rms(signal) / rms(noise))`.
pub fn snr_db(signal: &[f64], noise: &[f64]) -> Result<f64, DataError> {
    Ok(10.0 * (rms(signal)? / rms(noise)?).log10())
}

/// Mixing coefficient that puts `n` at `snr_db` below/above `x`.
pub fn lambda_for_snr(x: &[f64], n: &[f64], snr_db: f64) -> Result<f64, DataError> {
    let rn = rms(n)?;
    if rn == 0.0 {
        return Err(DataError::ZeroRms);
    }
    Ok(rms(x)? / (rn * 10f64.powf(snr_db / 10.0)))
}

/// Mixes `n` into `x` at the requested SNR.
pub fn mix(x: &[f64], n: &[f64], snr_db: f64) -> Result<(Vec<f64>, f64), DataError> {
    if x.len() != n.len() {
        return Err(DataError::LengthMismatch(x.len(), n.len()));
    }
    let lambda = lambda_for_snr(x, n, snr_db)?;
    Ok((
        x.iter().zip(n).map(|(a, b)| a + lambda * b).collect(),
        lambda,
    ))
}

/// Generator for item `index` of a run seeded with `seed`; independent of how
/// many other items are drawn or in which order.
pub fn item_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Draws `count` contaminated segments, each pairing a random clean segment
/// with a random artifact (both with replacement) at an SNR drawn uniformly
/// from `range`.
pub fn synthesize(
    eeg_pool: &[Segment],
    artifact_pool: &[Segment],
    range: SnrRange,
    count: usize,
    seed: u64,
) -> Result<Vec<MixedSample>, DataError> {
    synthesize_with(
        eeg_pool,
        artifact_pool,
        count,
        seed,
        |rng| {
            if range.min == range.max {
                range.min
            } else {
                rng.gen_range(range.min..range.max)
            }
        },
        range,
    )
}

/// [`synthesize`] at one fixed SNR.
pub fn synthesize_at(
    eeg_pool: &[Segment],
    artifact_pool: &[Segment],
    snr: f64,
    count: usize,
    seed: u64,
) -> Result<Vec<MixedSample>, DataError> {
    synthesize_with(
        eeg_pool,
        artifact_pool,
        count,
        seed,
        |_| snr,
        SnrRange { min: snr, max: snr },
    )
}

fn synthesize_with(
    eeg_pool: &[Segment],
    artifact_pool: &[Segment],
    count: usize,
    seed: u64,
    draw_snr: impl Fn(&mut ChaCha8Rng) -> f64,
    range: SnrRange,
) -> Result<Vec<MixedSample>, DataError> {
    range.validate()?;
    if count == 0 {
        return Ok(Vec::new());
    }
    if eeg_pool.is_empty() {
        return Err(DataError::EmptyPool("clean EEG"));
    }
    if artifact_pool.is_empty() {
        return Err(DataError::EmptyPool("artifact"));
    }
    (0..count)
        .map(|i| {
            let mut rng = item_rng(seed, i as u64);
            let e = &eeg_pool[rng.gen_range(0..eeg_pool.len())];
            let a = &artifact_pool[rng.gen_range(0..artifact_pool.len())];
            let snr = draw_snr(&mut rng);
            let (y, lambda) = mix(&e.samples, &a.samples, snr)?;
            Ok(MixedSample {
                y,
                x: e.samples.clone(),
                n: a.samples.clone(),
                lambda,
                snr_db: snr,
                artifact: a.kind,
                eeg_index: e.source_index,
                artifact_index: a.source_index,
            })
        })
        .collect()
}

/// Splits a pool into `(train, test)` with `test_fraction` of the segments
/// (rounded) held out, after a seeded shuffle.
pub fn split_pool(pool: &[Segment], test_fraction: f64, seed: u64) -> (Vec<Segment>, Vec<Segment>) {
    let mut idx: Vec<usize> = (0..pool.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = ((pool.len() as f64) * test_fraction.clamp(0.0, 1.0)).round() as usize;
    let test = idx[..n_test].iter().map(|&i| pool[i].clone()).collect();
    let train = idx[n_test..].iter().map(|&i| pool[i].clone()).collect();
    (train, test)
}

/// The three input/target pairings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseKind {
    RawToClean,
    CleanToClean,
    ArtifactToArtifact,
}

impl CaseKind {
    pub const ALL: [CaseKind; 3] = [
        CaseKind::RawToClean,
        CaseKind::CleanToClean,
        CaseKind::ArtifactToArtifact,
    ];

    /// Indicator the decoder runs with for this case.
    pub fn mode(self) -> IndicatorMode {
        match self {
            CaseKind::ArtifactToArtifact => IndicatorMode::Artifact,
            _ => IndicatorMode::Signal,
        }
    }

    /// 1, 2 or 3.
    pub fn number(self) -> usize {
        self as usize + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingCase {
    pub input: Vec<f64>,
    pub target: Vec<f64>,
    pub kind: CaseKind,
}

impl TrainingCase {
    pub fn mode(&self) -> IndicatorMode {
        self.kind.mode()
    }
}

/// Probabilities of drawing cases 1, 2 and 3.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixRatios {
    pub raw_to_clean: f64,
    pub clean_to_clean: f64,
    pub artifact_to_artifact: f64,
}

impl Default for MixRatios {
    fn default() -> Self {
        Self {
            raw_to_clean: 0.8,
            clean_to_clean: 0.1,
            artifact_to_artifact: 0.1,
        }
    }
}

impl MixRatios {
    pub fn new(
        raw_to_clean: f64,
        clean_to_clean: f64,
        artifact_to_artifact: f64,
    ) -> Result<Self, DataError> {
        let r = Self {
            raw_to_clean,
            clean_to_clean,
            artifact_to_artifact,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn as_array(&self) -> [f64; 3] {
        [
            self.raw_to_clean,
            self.clean_to_clean,
            self.artifact_to_artifact,
        ]
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let a = self.as_array();
        let ok = a.iter().all(|v| v.is_finite() && *v >= 0.0)
            && (a.iter().sum::<f64>() - 1.0).abs() <= 1e-9;
        if ok {
            Ok(())
        } else {
            Err(DataError::InvalidRatios(a))
        }
    }

    fn draw(&self, u: f64) -> CaseKind {
        let mut acc = 0.0;
        let mut last = CaseKind::RawToClean;
        for (kind, p) in CaseKind::ALL.into_iter().zip(self.as_array()) {
            if p > 0.0 {
                last = kind;
                acc += p;
                if u < acc {
                    return kind;
                }
            }
        }
        last
    }
}

/// Builds one training item per mixed sample. Item `i` is case 1 on
/// `samples[i]`, case 2 on a random clean segment or case 3 on a random
/// artifact segment, chosen with the given probabilities. Items are returned
/// in a seeded shuffled order.
pub fn make_training_cases(
    samples: &[MixedSample],
    eeg_pool: &[Segment],
    artifact_pool: &[Segment],
    ratios: MixRatios,
    seed: u64,
) -> Result<Vec<TrainingCase>, DataError> {
    ratios.validate()?;
    if ratios.clean_to_clean > 0.0 && eeg_pool.is_empty() && !samples.is_empty() {
        return Err(DataError::EmptyPool("clean EEG"));
    }
    if ratios.artifact_to_artifact > 0.0 && artifact_pool.is_empty() && !samples.is_empty() {
        return Err(DataError::EmptyPool("artifact"));
    }
    let mut cases: Vec<TrainingCase> = samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = item_rng(seed, i as u64);
            match ratios.draw(rng.gen::<f64>()) {
                CaseKind::RawToClean => TrainingCase {
                    input: s.y.clone(),
                    target: s.x.clone(),
                    kind: CaseKind::RawToClean,
                },
                CaseKind::CleanToClean => {
                    let e = &eeg_pool[rng.gen_range(0..eeg_pool.len())].samples;
                    TrainingCase {
                        input: e.clone(),
                        target: e.clone(),
                        kind: CaseKind::CleanToClean,
                    }
                }
                CaseKind::ArtifactToArtifact => {
                    let a = &artifact_pool[rng.gen_range(0..artifact_pool.len())].samples;
                    TrainingCase {
                        input: a.clone(),
                        target: a.clone(),
                        kind: CaseKind::ArtifactToArtifact,
                    }
                }
            }
        })
        .collect();
    cases.shuffle(&mut item_rng(seed, u64::MAX));
    Ok(cases)
}
