//! End-to-end acceptance checks. Runs as a plain binary (no libtest harness)
//! and prints one PASS/FAIL line per criterion.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use deepsep::autodiff::Tensor;
use deepsep::baselines::{lms_denoise, LmsConfig};
use deepsep::datagen::simulate::{simulate_pool, SimConfig};
use deepsep::datagen::{
    make_training_cases, save_segments, snr_db, split_pool, synthesize, Manifest, MixRatios,
    MixedSample, Segment, SegmentFile, SegmentKind, DEFAULT_SNR_RANGE,
};
use deepsep::erp::{average, EpochWindow};
use deepsep::metrics::{cc, rrmse_s, rrmse_t, spearman};
use deepsep::model::{forward, save_weights, ArchConfig, IndicatorMode, NetworkParams};
use deepsep::trainer::{
    evaluate, gradcheck_cases, snr_sweep, GradcheckOptions, IdentityDenoiser, LmsDenoiser,
    NetworkDenoiser, TrainConfig, TrainLog, Trainer,
};

// Tolerances and sizes, fixed.
const GRAD_REL_TOL: f64 = 1e-4;
const GRAD_ABS_FLOOR: f64 = 1e-8;
const GRAD_STEP: f64 = 1e-5;
const GRAD_RUNTIME_S: f64 = 60.0;
const GATE_TOL: f64 = 1e-12;
const GATE_DRAWS: usize = 100;
const SNR_TOL_DB: f64 = 1e-9;
const SNR_SAMPLES: usize = 1000;
const METRIC_TOL: f64 = 1e-10;
const DESK_TRAIN: usize = 2000;
const DESK_TEST: usize = 400;
const DESK_EPOCHS: usize = 50;
const DESK_CC_MARGIN: f64 = 0.05;
const DESK_LOSS_RATIO: f64 = 0.5;
const SWEEP_PER_LEVEL: usize = 40;
const SWEEP_MIN_SPEARMAN: f64 = 0.5;
const ERP_EPOCHS: usize = 100;
const ERP_FACTOR: f64 = 2.0;
const FS: f64 = 256.0;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn binary() -> &'static str {
    env!("CARGO_BIN_EXE_deepsep")
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(binary())
        .args(args)
        .env("DEEPSEP_THREADS", "1")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "deepsep {} exited with {:?}: {}",
            args.first().unwrap_or(&""),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr).trim()
        ))
    }
}

fn gradient_suite() -> Outcome {
    let started = Instant::now();
    let options = GradcheckOptions {
        step: GRAD_STEP,
        abs_floor: GRAD_ABS_FLOOR,
        tolerance: GRAD_REL_TOL,
    };
    let reports = match gradcheck_cases(ArchConfig::tiny(), 32, 2024, options) {
        Ok(r) => r,
        Err(e) => return outcome(false, e.to_string()),
    };
    let secs = started.elapsed().as_secs_f64();
    let worst = reports.iter().map(|r| r.max_rel).fold(0.0, f64::max);
    let all = reports.len() == 3 && reports.iter().all(|r| r.passed() && r.compared > 0);
    outcome(
        all && secs < GRAD_RUNTIME_S,
        format!("3 cases, worst relative error {worst:.2e} (limit {GRAD_REL_TOL:.0e}), {secs:.1}s"),
    )
}

fn gating_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for draw in 0..GATE_DRAWS {
        let arch = if draw % 2 == 0 {
            ArchConfig::tiny()
        } else {
            ArchConfig::default()
        };
        let params = NetworkParams::init(arch, draw as u64).unwrap();
        let len = rng.gen_range(15..160);
        let amp = rng.gen_range(0.1..20.0);
        let x: Vec<f64> = (0..len).map(|_| rng.gen_range(-amp..amp)).collect();
        let t = Tensor::from_signal(&x);
        let s = forward(&t, &params, IndicatorMode::Signal).unwrap();
        let a = forward(&t, &params, IndicatorMode::Artifact).unwrap();
        for ((zs, za), z) in s
            .attenuated
            .data()
            .iter()
            .zip(a.attenuated.data())
            .zip(s.embedding.data())
        {
            worst = worst.max((zs + za - z).abs());
        }
    }
    outcome(
        worst <= GATE_TOL,
        format!("{GATE_DRAWS} draws, max |sum - z| = {worst:.1e}"),
    )
}

fn shape_polymorphism(work: &Path) -> Outcome {
    let params = NetworkParams::init(ArchConfig::default(), 3).unwrap();
    for len in [15usize, 64, 512, 1000] {
        let x: Vec<f64> = (0..len).map(|i| (i as f64 * 0.05).sin()).collect();
        let out = forward(&Tensor::from_signal(&x), &params, IndicatorMode::Signal)
            .unwrap()
            .output;
        if out.shape() != [1, 1, len] {
            return outcome(
                false,
                format!("length {len} came back as {:?}", out.shape()),
            );
        }
    }

    let dir = work.join("channels");
    fs::create_dir_all(&dir).unwrap();
    let model = dir.join("model.dsw");
    save_weights(&params, &model).unwrap();
    let (channels, per_channel, len) = (59usize, 2usize, 256usize);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let segments: Vec<Vec<f64>> = (0..channels * per_channel)
        .map(|_| (0..len).map(|_| rng.gen_range(-40.0..40.0)).collect())
        .collect();
    let file = SegmentFile::new(len, segments).unwrap();
    let input = dir.join("recording.esg");
    save_segments(&input, &file).unwrap();
    let mut manifest = Manifest::new("eeg", FS, &file, "random test recording");
    manifest.channels = Some(channels);
    manifest.save(Manifest::path_for(&input)).unwrap();

    let out = dir.join("out");
    if let Err(e) = run_cli(&[
        "denoise",
        "--model",
        model.to_str().unwrap(),
        "--input",
        input.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]) {
        return outcome(false, e);
    }
    let result = deepsep::datagen::load_segments(out.join("denoised.esg")).unwrap();
    let m = Manifest::load(out.join("denoised.json")).unwrap();
    let ok = m.channels == Some(channels)
        && result.len() == channels * per_channel
        && result.segment_len == len;
    outcome(
        ok,
        format!(
            "lengths 15/64/512/1000 preserved; denoise returned {:?} channels, {} segments of {}",
            m.channels,
            result.len(),
            result.segment_len
        ),
    )
}

fn pools(
    eeg: usize,
    artifact: usize,
    kind: SegmentKind,
    seed: u64,
) -> (Vec<Segment>, Vec<Segment>) {
    let cfg = SimConfig::default();
    (
        simulate_pool(SegmentKind::CleanEeg, eeg, cfg, seed),
        simulate_pool(kind, artifact, cfg, seed),
    )
}

fn snr_round_trip() -> Outcome {
    let (eeg, eog) = pools(200, 200, SegmentKind::Eog, 11);
    let samples = synthesize(&eeg, &eog, DEFAULT_SNR_RANGE, SNR_SAMPLES, 12).unwrap();
    let worst = samples
        .iter()
        .map(|s| (snr_db(&s.x, &s.scaled_artifact()).unwrap() - s.snr_db).abs())
        .fold(0.0, f64::max);
    outcome(
        samples.len() == SNR_SAMPLES && worst < SNR_TOL_DB,
        format!("{SNR_SAMPLES} samples, max |error| = {worst:.1e} dB"),
    )
}

/// Direct-sum reference implementations.
mod oracle {
    use std::f64::consts::PI;

    pub fn rms(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    pub fn rrmse_t(p: &[f64], t: &[f64]) -> f64 {
        let d: Vec<f64> = p.iter().zip(t).map(|(a, b)| a - b).collect();
        rms(&d) / rms(t)
    }

    pub fn cc(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - ma) * (y - mb))
            .sum::<f64>()
            / n;
        let sa = (a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() / n).sqrt();
        let sb = (b.iter().map(|y| (y - mb).powi(2)).sum::<f64>() / n).sqrt();
        cov / (sa * sb)
    }

    /// One-sided Welch density: periodic Hann, half-overlapping segments of
    /// min(256, len) samples, direct DFT.
    pub fn psd(x: &[f64], fs: f64) -> Vec<f64> {
        let m = x.len().min(256);
        let hop = if m == 256 { 128 } else { m / 2 };
        let w: Vec<f64> = (0..m)
            .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / m as f64).cos())
            .collect();
        let scale = fs * w.iter().map(|v| v * v).sum::<f64>();
        let frames = (x.len() - m) / hop + 1;
        let mut p = vec![0.0; m / 2 + 1];
        for f in 0..frames {
            for (k, pk) in p.iter_mut().enumerate() {
                let (mut re, mut im) = (0.0, 0.0);
                for i in 0..m {
                    let ang = -2.0 * PI * (k * i) as f64 / m as f64;
                    let v = x[f * hop + i] * w[i];
                    re += v * ang.cos();
                    im += v * ang.sin();
                }
                let two_sided = if k == 0 || 2 * k == m { 1.0 } else { 2.0 };
                *pk += two_sided * (re * re + im * im) / scale / frames as f64;
            }
        }
        p
    }

    pub fn rrmse_s(p: &[f64], t: &[f64], fs: f64) -> f64 {
        rrmse_t(&psd(p, fs), &psd(t, fs))
    }
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut worst = [0.0f64; 3];
    for _ in 0..200 {
        let t: Vec<f64> = (0..64).map(|_| rng.gen_range(-50.0..50.0)).collect();
        let p: Vec<f64> = t
            .iter()
            .map(|v| 0.7 * v + rng.gen_range(-20.0..20.0))
            .collect();
        worst[0] = worst[0].max((rrmse_t(&p, &t).unwrap() - oracle::rrmse_t(&p, &t)).abs());
        worst[1] = worst[1].max((rrmse_s(&p, &t, FS).unwrap() - oracle::rrmse_s(&p, &t, FS)).abs());
        worst[2] = worst[2].max((cc(&p, &t).unwrap() - oracle::cc(&p, &t)).abs());
    }
    let x: Vec<f64> = (0..64).map(|_| rng.gen_range(-5.0..5.0)).collect();
    let neg: Vec<f64> = x.iter().map(|v| -v).collect();
    let two: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
    let exact = cc(&x, &x).unwrap() == 1.0
        && cc(&x, &neg).unwrap() == -1.0
        && rrmse_t(&two, &x).unwrap() == 1.0;
    outcome(
        worst.iter().all(|&w| w < METRIC_TOL) && exact,
        format!(
            "max deviation rrmse_t {:.1e}, rrmse_s {:.1e}, cc {:.1e}; exact identities {}",
            worst[0],
            worst[1],
            worst[2],
            if exact { "hold" } else { "broken" }
        ),
    )
}

struct DeskRun {
    params: NetworkParams,
    log: TrainLog,
    test: Vec<MixedSample>,
    eeg_test: Vec<Segment>,
    eog_test: Vec<Segment>,
    seconds: f64,
}

fn desk_train() -> Result<DeskRun, String> {
    let started = Instant::now();
    let (eeg, eog) = pools(1200, 800, SegmentKind::Eog, 7);
    let (eeg_train, eeg_test) = split_pool(&eeg, 0.2, 7);
    let (eog_train, eog_test) = split_pool(&eog, 0.2, 8);
    let train = synthesize(&eeg_train, &eog_train, DEFAULT_SNR_RANGE, DESK_TRAIN, 1)
        .map_err(|e| e.to_string())?;
    let test = synthesize(&eeg_test, &eog_test, DEFAULT_SNR_RANGE, DESK_TEST, 2)
        .map_err(|e| e.to_string())?;
    let cases = make_training_cases(&train, &eeg_train, &eog_train, MixRatios::default(), 3)
        .map_err(|e| e.to_string())?;
    let params = NetworkParams::init(ArchConfig::default(), 4).map_err(|e| e.to_string())?;
    let config = TrainConfig {
        epochs: DESK_EPOCHS,
        seed: 5,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(params, config).map_err(|e| e.to_string())?;
    trainer
        .run(&cases, None, |_| {})
        .map_err(|e| e.to_string())?;
    let (params, log) = trainer.into_parts();
    Ok(DeskRun {
        params,
        log,
        test,
        eeg_test,
        eog_test,
        seconds: started.elapsed().as_secs_f64(),
    })
}

fn desk_end_to_end(run: &DeskRun) -> Outcome {
    let mean_cc = |d: &dyn deepsep::trainer::Denoiser| {
        evaluate(d, &run.test, FS).map(|r| r.aggregate().cc_mean)
    };
    let (Ok(net), Ok(raw), Ok(lms)) = (
        mean_cc(&NetworkDenoiser {
            params: &run.params,
        }),
        mean_cc(&IdentityDenoiser),
        mean_cc(&LmsDenoiser::default()),
    ) else {
        return outcome(false, "evaluation failed");
    };
    let first = run.log.first_train_loss().unwrap_or(f64::NAN);
    let last = run.log.last_train_loss().unwrap_or(f64::NAN);
    let pass = net >= raw + DESK_CC_MARGIN && net > lms && last < DESK_LOSS_RATIO * first;
    outcome(
        pass,
        format!(
            "cc deepsep {net:.3} vs raw {raw:.3} (need +{DESK_CC_MARGIN}) and lms {lms:.3}; \
             train loss {first:.4} -> {last:.4} (need < {:.4}); {:.0}s",
            DESK_LOSS_RATIO * first,
            run.seconds
        ),
    )
}

fn desk_sweep(run: &DeskRun) -> Outcome {
    let levels: Vec<i64> = (-7..=2).collect();
    let sweep = match snr_sweep(
        &NetworkDenoiser {
            params: &run.params,
        },
        &run.eeg_test,
        &run.eog_test,
        &levels,
        SWEEP_PER_LEVEL,
        9,
        FS,
    ) {
        Ok(s) => s,
        Err(e) => return outcome(false, e.to_string()),
    };
    let snr: Vec<f64> = sweep.iter().map(|l| l.snr_db as f64).collect();
    let ccs: Vec<f64> = sweep.iter().map(|l| l.aggregate.cc_mean).collect();
    let rho = spearman(&snr, &ccs).unwrap_or(f64::NAN);
    outcome(
        rho > SWEEP_MIN_SPEARMAN,
        format!(
            "spearman(snr, cc) = {rho:.3}; cc at -7 dB {:.3}, at 2 dB {:.3}",
            ccs[0],
            ccs[ccs.len() - 1]
        ),
    )
}

fn baseline_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut worst = 0.0f64;
    let mut passthrough = true;
    for _ in 0..200 {
        let y: Vec<f64> = (0..512).map(|_| rng.gen_range(-100.0..100.0)).collect();
        let r: Vec<f64> = (0..512).map(|_| rng.gen_range(-50.0..50.0)).collect();
        let out = lms_denoise(&y, &r, &LmsConfig::default()).unwrap();
        for i in 0..y.len() {
            let scale = y[i].abs().max(out.artifact[i].abs()).max(f64::MIN_POSITIVE);
            worst = worst.max((out.denoised[i] + out.artifact[i] - y[i]).abs() / scale);
        }
        passthrough &= lms_denoise(&y, &[0.0; 512], &LmsConfig::default())
            .unwrap()
            .denoised
            == y;
    }
    outcome(
        worst <= f64::EPSILON && passthrough,
        format!(
            "max |e + a - y| = {worst:.2} eps (relative); zero reference {}",
            if passthrough {
                "returns the input"
            } else {
                "changed the input"
            }
        ),
    )
}

fn files_of(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            out.extend(files_of(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

fn pipeline(root: &Path) -> Result<(), String> {
    let s = |p: PathBuf| p.to_str().unwrap().to_string();
    let eeg = s(root.join("eeg"));
    let eog = s(root.join("eog"));
    let data = s(root.join("data"));
    let model = s(root.join("model"));
    run_cli(&[
        "simulate", "--kind", "eeg", "--count", "80", "--length", "128", "--seed", "3", "--out",
        &eeg,
    ])?;
    run_cli(&[
        "simulate", "--kind", "eog", "--count", "60", "--length", "128", "--seed", "3", "--out",
        &eog,
    ])?;
    run_cli(&[
        "synth",
        "--eeg",
        &format!("{eeg}/eeg.esg"),
        "--artifact",
        &format!("{eog}/eog.esg"),
        "--count",
        "96",
        "--seed",
        "4",
        "--out",
        &data,
    ])?;
    run_cli(&[
        "train",
        "--data",
        &data,
        "--epochs",
        "4",
        "--batch",
        "8",
        "--arch",
        "tiny",
        "--checkpoint-every",
        "2",
        "--seed",
        "5",
        "--out",
        &model,
    ])
}

fn determinism(work: &Path) -> Outcome {
    let (a, b) = (work.join("run_a"), work.join("run_b"));
    for dir in [&a, &b] {
        if let Err(e) = pipeline(dir) {
            return outcome(false, e);
        }
    }
    let (fa, fb) = (files_of(&a), files_of(&b));
    let rel = |root: &Path, files: &[PathBuf]| -> Vec<PathBuf> {
        files
            .iter()
            .map(|p| p.strip_prefix(root).unwrap().to_path_buf())
            .collect()
    };
    if rel(&a, &fa) != rel(&b, &fb) {
        return outcome(false, "the two runs wrote different file sets");
    }
    let (ta, tb) = (a.to_str().unwrap(), b.to_str().unwrap());
    for (pa, pb) in fa.iter().zip(&fb) {
        let (mut ba, bb) = (fs::read(pa).unwrap(), fs::read(pb).unwrap());
        // Run configurations name their own output directory.
        if pa.file_name().is_some_and(|n| n == "run_config.json") {
            ba = String::from_utf8(ba).unwrap().replace(ta, tb).into_bytes();
        }
        if ba != bb {
            return outcome(
                false,
                format!("{} differs", pa.strip_prefix(&a).unwrap().display()),
            );
        }
    }
    let log = fs::read_to_string(a.join("model/trainlog.csv")).unwrap_or_default();
    outcome(
        log.lines().count() == 5,
        format!(
            "{} files byte-identical across two seeded simulate/synth/train runs",
            fa.len()
        ),
    )
}

fn erp_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let window = EpochWindow::from_ms(100.0, 400.0, FS);
    let template: Vec<f64> = (0..window.len())
        .map(|i| {
            let t = i as f64 / FS - 0.1;
            8.0 * (-((t - 0.3) / 0.05).powi(2)).exp() - 4.0 * (-((t - 0.1) / 0.03).powi(2)).exp()
        })
        .collect();
    let sigma = 10.0;
    let noise = Normal::new(0.0, sigma).unwrap();
    let gap = 40;
    let mut signal = vec![0.0; gap];
    let mut events = Vec::new();
    for _ in 0..ERP_EPOCHS {
        events.push(signal.len() + window.pre);
        signal.extend(template.iter().map(|v| v + noise.sample(&mut rng)));
        signal.extend((0..gap).map(|_| noise.sample(&mut rng)));
    }
    let erp = match average(&signal, &events, window) {
        Ok(e) => e,
        Err(e) => return outcome(false, e.to_string()),
    };
    let err: Vec<f64> = erp.iter().zip(&template).map(|(a, b)| a - b).collect();
    let rms_err = oracle::rms(&err);
    let expected = sigma / (ERP_EPOCHS as f64).sqrt();
    let ratio = rms_err / expected;
    outcome(
        window.len() == 128 && (1.0 / ERP_FACTOR..=ERP_FACTOR).contains(&ratio),
        format!(
            "{} samples per epoch; rms error {rms_err:.3} vs noise/sqrt(N) {expected:.3} (ratio {ratio:.2})",
            window.len()
        ),
    )
}

fn main() {
    let work = tempfile::tempdir().expect("temporary directory");
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut record = |id: u32, name: &'static str, o: Outcome| {
        println!(
            "{} {id:>2} {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        results.push((id, name, o));
    };

    record(1, "gradient suite", gradient_suite());
    record(2, "gating identity", gating_identity());
    record(3, "shape polymorphism", shape_polymorphism(work.path()));
    record(4, "snr round trip", snr_round_trip());
    record(5, "metric oracles", metric_oracles());
    match desk_train() {
        Ok(run) => {
            record(6, "desk-scale end-to-end (eog)", desk_end_to_end(&run));
            record(7, "desk-scale snr sweep", desk_sweep(&run));
        }
        Err(e) => {
            record(6, "desk-scale end-to-end (eog)", outcome(false, e.clone()));
            record(7, "desk-scale snr sweep", outcome(false, e));
        }
    }
    record(8, "baseline exactness", baseline_exactness());
    record(9, "determinism", determinism(work.path()));
    record(10, "erp check", erp_check());

    let failed: Vec<u32> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!(
        "acceptance: {}/{} criteria passed",
        results.len() - failed.len(),
        results.len()
    );
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
