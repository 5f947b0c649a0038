//! Synthetic segment pools for when recorded ones are not at hand.
//!
//! - Clean EEG: random-phase noise with a `1/f` background, a theta and an
//!   alpha peak, band-limited to 0.5–45 Hz.
//! - EOG: one or two blink-shaped deflections (fast rise, slower decay) over a
//!   slow drift below 2 Hz.
//! - EMG: 20–120 Hz noise under a burst envelope that covers part or all of
//!   the segment.
//!
//! Amplitudes are in arbitrary microvolt-like units; every segment is a pure
//! function of `(seed, kind, index)`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{item_rng, pool_from, Segment, SegmentKind};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub segment_len: usize,
    pub fs: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            segment_len: super::DEFAULT_SEGMENT_LEN,
            fs: super::DEFAULT_FS,
        }
    }
}

fn stream_seed(seed: u64, kind: SegmentKind) -> u64 {
    let tag = match kind {
        SegmentKind::CleanEeg => 0x45_45_47,
        SegmentKind::Eog => 0x45_4f_47,
        SegmentKind::Emg => 0x45_4d_47,
    };
    seed ^ (tag << 40)
}

/// `count` segments of one kind.
pub fn simulate_pool(kind: SegmentKind, count: usize, cfg: SimConfig, seed: u64) -> Vec<Segment> {
    let mut planner = FftPlanner::new();
    let data = (0..count)
        .map(|i| {
            let mut rng = item_rng(stream_seed(seed, kind), i as u64);
            match kind {
                SegmentKind::CleanEeg => clean_eeg(&mut rng, cfg, &mut planner),
                SegmentKind::Eog => eog(&mut rng, cfg, &mut planner),
                SegmentKind::Emg => emg(&mut rng, cfg, &mut planner),
            }
        })
        .collect();
    pool_from(data, kind)
}

/// Real noise whose expected amplitude spectrum follows `shape(f)`, scaled to
/// unit RMS.
fn shaped_noise(
    rng: &mut ChaCha8Rng,
    cfg: SimConfig,
    planner: &mut FftPlanner<f64>,
    shape: impl Fn(f64) -> f64,
) -> Vec<f64> {
    let n = cfg.segment_len;
    let mut spec = vec![Complex::new(0.0, 0.0); n];
    for k in 1..=n / 2 {
        let f = k as f64 * cfg.fs / n as f64;
        let a = shape(f);
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        spec[k] = Complex::new(a * re, a * im);
        if k != n - k {
            spec[n - k] = spec[k].conj();
        } else {
            spec[k].im = 0.0;
        }
    }
    planner.plan_fft_inverse(n).process(&mut spec);
    let mut x: Vec<f64> = spec.iter().map(|c| c.re).collect();
    let r = (x.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    if r > 0.0 {
        x.iter_mut().for_each(|v| *v /= r);
    }
    x
}

fn smooth_step(x: f64, edge: f64, width: f64) -> f64 {
    1.0 / (1.0 + (-(x - edge) / width).exp())
}

fn bump(f: f64, centre: f64, width: f64) -> f64 {
    (-0.5 * ((f - centre) / width).powi(2)).exp()
}

fn clean_eeg(rng: &mut ChaCha8Rng, cfg: SimConfig, planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let alpha_f = rng.gen_range(8.0..12.5);
    let alpha_a = rng.gen_range(0.3..2.0);
    let theta_f = rng.gen_range(4.5..7.5);
    let theta_a = rng.gen_range(0.1..0.8);
    let beta_a = rng.gen_range(0.05..0.3);
    let slope = rng.gen_range(0.7..1.3);
    let amp = rng.gen_range(8.0..25.0);
    let x = shaped_noise(rng, cfg, planner, |f| {
        let background = 1.0 / (1.0 + f).powf(slope);
        let peaks = alpha_a * bump(f, alpha_f, 1.2)
            + theta_a * bump(f, theta_f, 1.0)
            + beta_a * bump(f, 20.0, 4.0);
        (background + 0.4 * peaks) * smooth_step(f, 0.5, 0.15) * (1.0 - smooth_step(f, 45.0, 2.0))
    });
    x.into_iter().map(|v| amp * v).collect()
}

fn eog(rng: &mut ChaCha8Rng, cfg: SimConfig, planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let n = cfg.segment_len;
    let drift_a = rng.gen_range(5.0..30.0);
    let drift = shaped_noise(rng, cfg, planner, |f| {
        (-f / 0.7).exp() * smooth_step(f, 0.1, 0.05)
    });
    let mut x: Vec<f64> = drift.iter().map(|v| drift_a * v).collect();
    let blinks = if rng.gen_bool(0.15) {
        0
    } else {
        1 + usize::from(rng.gen_bool(0.35))
    };
    let duration = n as f64 / cfg.fs;
    for _ in 0..blinks {
        let onset = rng.gen_range(-0.2..duration - 0.1);
        let rise = rng.gen_range(0.05..0.1);
        let decay = rng.gen_range(0.08..0.2);
        let amp = rng.gen_range(60.0..250.0);
        for (i, v) in x.iter_mut().enumerate() {
            let t = i as f64 / cfg.fs - onset;
            if t > 0.0 {
                // Rises like u²·e^(-u) up to its peak at t = 2·rise, then
                // decays exponentially.
                let pulse = if t <= 2.0 * rise {
                    let u = t / rise;
                    u * u * (-u).exp() / (4.0 * (-2.0f64).exp())
                } else {
                    (-(t - 2.0 * rise) / decay).exp()
                };
                *v += amp * pulse;
            }
        }
    }
    x
}

fn emg(rng: &mut ChaCha8Rng, cfg: SimConfig, planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let n = cfg.segment_len;
    let lo = rng.gen_range(15.0..30.0);
    let hi = rng.gen_range(80.0f64..120.0).min(cfg.fs / 2.0 - 4.0);
    let amp = rng.gen_range(10.0..60.0);
    let noise = shaped_noise(rng, cfg, planner, |f| {
        smooth_step(f, lo, 3.0) * (1.0 - smooth_step(f, hi, 6.0))
    });
    let full = rng.gen_bool(0.4);
    let duration = n as f64 / cfg.fs;
    let (start, width) = if full {
        (0.0, duration)
    } else {
        let w = rng.gen_range(0.3..0.8) * duration;
        (rng.gen_range(0.0..duration - w), w)
    };
    let ramp = 0.1;
    noise
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let t = i as f64 / cfg.fs;
            let env = if full {
                1.0
            } else {
                smooth_step(t, start, ramp / 4.0)
                    * (1.0 - smooth_step(t, start + width, ramp / 4.0))
            };
            amp * env * v
        })
        .collect()
}
