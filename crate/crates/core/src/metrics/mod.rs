//! Denoising quality metrics and spectral estimators.
//!
//! - `rrmse_t = rms(ŷ − y) / rms(y)`
//! - `rrmse_s = rms(P(ŷ) − P(y)) / rms(P(y))` with `P` the Welch PSD
//! - `cc` is the Pearson correlation
//!
//! The PSD is a one-sided Welch estimate: 256-sample periodic Hann windows,
//! 50 % overlap, no detrending, periodograms averaged, density scaling so
//! that `Σ P·Δf` is the mean power of the signal.

mod report;

pub use report::{Aggregate, MetricsReport, SampleScore, SnrBucket};

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

pub const WELCH_SEGMENT: usize = 256;
pub const WELCH_HOP: usize = 128;
pub const SPECTROGRAM_WINDOW: usize = 64;
pub const SPECTROGRAM_HOP: usize = 32;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("signals differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty signal")]
    Empty,
    #[error("reference has zero rms")]
    ZeroReference,
    #[error("reference spectrum has zero rms")]
    ZeroReferenceSpectrum,
    #[error("signal of length {len} is shorter than the {need}-sample analysis window")]
    TooShort { len: usize, need: usize },
    #[error("zero-variance signal has no correlation")]
    ZeroVariance,
    #[error("hop must be at least 1")]
    ZeroHop,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<(), MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(())
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

/// Temporal relative RMS error of `pred` against `truth`.
pub fn rrmse_t(pred: &[f64], truth: &[f64]) -> Result<f64, MetricError> {
    check_pair(pred, truth)?;
    let r = rms(truth);
    if r == 0.0 {
        return Err(MetricError::ZeroReference);
    }
    let diff: Vec<f64> = pred.iter().zip(truth).map(|(a, b)| a - b).collect();
    Ok(rms(&diff) / r)
}

/// Spectral relative RMS error of `pred` against `truth` on Welch PSDs
/// (see [`Welch::for_len`]).
pub fn rrmse_s(pred: &[f64], truth: &[f64], fs: f64) -> Result<f64, MetricError> {
    check_pair(pred, truth)?;
    let mut welch = Welch::for_len(pred.len());
    let pp = welch.psd(pred, fs)?.power;
    let pt = welch.psd(truth, fs)?.power;
    let r = rms(&pt);
    if r == 0.0 {
        return Err(MetricError::ZeroReferenceSpectrum);
    }
    let diff: Vec<f64> = pp.iter().zip(&pt).map(|(a, b)| a - b).collect();
    Ok(rms(&diff) / r)
}

/// Pearson correlation coefficient.
pub fn cc(a: &[f64], b: &[f64]) -> Result<f64, MetricError> {
    check_pair(a, b)?;
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(MetricError::ZeroVariance);
    }
    // sqrt(s * s) == s exactly, so cc(x, x) and cc(x, -x) come out as ±1.
    let denom = match (saa * sbb).sqrt() {
        d if d.is_finite() && d > 0.0 => d,
        _ => saa.sqrt() * sbb.sqrt(),
    };
    Ok((sab / denom).clamp(-1.0, 1.0))
}

/// Ranks starting at 1; ties share their average rank.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64, MetricError> {
    check_pair(a, b)?;
    cc(&ranks(a), &ranks(b))
}

/// Periodic Hann window, `0.5 − 0.5·cos(2πn/N)`.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Window {
    #[default]
    Hann,
    Rectangular,
}

impl Window {
    fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Hann => hann(n),
            Window::Rectangular => vec![1.0; n],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Psd {
    pub freqs: Vec<f64>,
    pub power: Vec<f64>,
}

/// Welch estimator with a cached FFT plan.
pub struct Welch {
    segment: usize,
    hop: usize,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl Welch {
    pub fn new(segment: usize, hop: usize) -> Self {
        Self {
            segment,
            hop: hop.max(1),
            window: hann(segment),
            fft: FftPlanner::new().plan_fft_forward(segment),
        }
    }

    /// Default parameters, with the segment shortened to `len` (and the hop
    /// to half of it) for signals shorter than one default segment.
    pub fn for_len(len: usize) -> Self {
        if len >= WELCH_SEGMENT {
            Self::new(WELCH_SEGMENT, WELCH_HOP)
        } else {
            Self::new(len, len / 2)
        }
    }

    pub fn psd(&mut self, x: &[f64], fs: f64) -> Result<Psd, MetricError> {
        let m = self.segment;
        if x.len() < m || m == 0 {
            return Err(MetricError::TooShort {
                len: x.len(),
                need: m,
            });
        }
        let bins = m / 2 + 1;
        let frames = (x.len() - m) / self.hop + 1;
        let norm = fs * self.window.iter().map(|w| w * w).sum::<f64>();
        let mut power = vec![0.0; bins];
        let mut buf = vec![Complex::new(0.0, 0.0); m];
        for f in 0..frames {
            let start = f * self.hop;
            for ((b, &v), &w) in buf.iter_mut().zip(&x[start..start + m]).zip(&self.window) {
                *b = Complex::new(v * w, 0.0);
            }
            self.fft.process(&mut buf);
            for (k, p) in power.iter_mut().enumerate() {
                let one_sided = if k == 0 || (m % 2 == 0 && k == m / 2) {
                    1.0
                } else {
                    2.0
                };
                *p += one_sided * buf[k].norm_sqr() / norm;
            }
        }
        power.iter_mut().for_each(|p| *p /= frames as f64);
        let freqs = (0..bins).map(|k| k as f64 * fs / m as f64).collect();
        Ok(Psd { freqs, power })
    }
}

/// Welch PSD with the default parameters (see [`Welch::for_len`]).
pub fn psd(x: &[f64], fs: f64) -> Result<Psd, MetricError> {
    Welch::for_len(x.len()).psd(x, fs)
}

/// Short-time Fourier magnitudes, `magnitude[bin][frame]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub freqs: Vec<f64>,
    /// Centre time of each frame in seconds.
    pub times: Vec<f64>,
    pub magnitude: Vec<Vec<f64>>,
}

impl Spectrogram {
    pub fn frames(&self) -> usize {
        self.times.len()
    }

    /// Index of the strongest bin in each frame.
    pub fn peak_bins(&self) -> Vec<usize> {
        (0..self.frames())
            .map(|t| {
                (0..self.freqs.len())
                    .max_by(|&a, &b| self.magnitude[a][t].total_cmp(&self.magnitude[b][t]))
                    .unwrap_or(0)
            })
            .collect()
    }
}

/// Frame count `floor((len − window) / hop) + 1`.
pub fn frame_count(len: usize, window: usize, hop: usize) -> usize {
    (len - window) / hop + 1
}

pub fn spectrogram(
    x: &[f64],
    fs: f64,
    window: usize,
    hop: usize,
    kind: Window,
) -> Result<Spectrogram, MetricError> {
    if hop == 0 {
        return Err(MetricError::ZeroHop);
    }
    if window == 0 || window > x.len() {
        return Err(MetricError::TooShort {
            len: x.len(),
            need: window.max(1),
        });
    }
    let w = kind.coefficients(window);
    let fft = FftPlanner::new().plan_fft_forward(window);
    let frames = frame_count(x.len(), window, hop);
    let bins = window / 2 + 1;
    let mut magnitude = vec![vec![0.0; frames]; bins];
    let mut buf = vec![Complex::new(0.0, 0.0); window];
    for f in 0..frames {
        let start = f * hop;
        for ((b, &v), &c) in buf.iter_mut().zip(&x[start..start + window]).zip(&w) {
            *b = Complex::new(v * c, 0.0);
        }
        fft.process(&mut buf);
        for (k, row) in magnitude.iter_mut().enumerate() {
            row[f] = buf[k].norm();
        }
    }
    Ok(Spectrogram {
        freqs: (0..bins).map(|k| k as f64 * fs / window as f64).collect(),
        times: (0..frames)
            .map(|f| (f * hop) as f64 / fs + window as f64 / (2.0 * fs))
            .collect(),
        magnitude,
    })
}
