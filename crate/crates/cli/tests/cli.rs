use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use deepsep::datagen::{load_segments, save_segments, Manifest, SegmentFile};

fn deepsep(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_deepsep"))
        .args(args)
        .env("DEEPSEP_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = deepsep(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Simulated pools plus a small synthesized set under `root`.
struct Fixture {
    _tmp: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().to_path_buf();
        ok(&[
            "simulate",
            "--kind",
            "eeg",
            "--count",
            "30",
            "--length",
            "256",
            "--seed",
            "1",
            "--out",
            p(&root.join("eeg")),
        ]);
        ok(&[
            "simulate",
            "--kind",
            "eog",
            "--count",
            "20",
            "--length",
            "256",
            "--seed",
            "1",
            "--out",
            p(&root.join("eog")),
        ]);
        let f = Self { _tmp: tmp, root };
        f.synth("data", 40, 2);
        f
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    fn synth(&self, out: &str, count: usize, seed: u64) {
        ok(&[
            "synth",
            "--eeg",
            p(&self.path("eeg/eeg.esg")),
            "--artifact",
            p(&self.path("eog/eog.esg")),
            "--count",
            &count.to_string(),
            "--snr-min",
            "-5",
            "--snr-max",
            "1",
            "--seed",
            &seed.to_string(),
            "--out",
            p(&self.path(out)),
        ]);
    }

    fn train(&self, out: &str, epochs: usize, extra: &[&str]) {
        let data = self.path("data");
        let out = self.path(out);
        let epochs = epochs.to_string();
        let mut args = vec![
            "train",
            "--data",
            p(&data),
            "--epochs",
            &epochs,
            "--batch",
            "8",
            "--arch",
            "tiny",
        ];
        args.extend(["--checkpoint-every", "2", "--seed", "3", "--out", p(&out)]);
        args.extend(extra);
        ok(&args);
    }
}

#[test]
fn synth_outputs_and_manifest() {
    let f = Fixture::new();
    for name in ["mixed", "clean", "artifact"] {
        assert_eq!(
            load_segments(f.path(&format!("data/{name}.esg")))
                .unwrap()
                .len(),
            40
        );
    }
    let m = Manifest::load(f.path("data/mixed.json")).unwrap();
    assert_eq!(m.samples.len(), 40);
    assert!(m
        .samples
        .iter()
        .all(|s| (-5.0..=1.0).contains(&s.snr_db) && s.lambda > 0.0));
    assert!(f.path("data/run_config.json").exists());

    f.synth("empty", 0, 2);
    assert!(load_segments(f.path("empty/mixed.esg")).unwrap().is_empty());
    assert_eq!(Manifest::load(f.path("empty/mixed.json")).unwrap().count, 0);

    f.synth("again", 40, 2);
    for name in ["mixed.esg", "clean.esg", "artifact.esg", "mixed.json"] {
        assert_eq!(
            fs::read(f.path(&format!("data/{name}"))).unwrap(),
            fs::read(f.path(&format!("again/{name}"))).unwrap()
        );
    }
}

#[test]
fn train_resume_and_denoise() {
    let f = Fixture::new();
    f.train("full", 4, &[]);
    let log = fs::read_to_string(f.path("full/trainlog.csv")).unwrap();
    assert_eq!(log.lines().count(), 5);
    assert!(f.path("full/checkpoints/checkpoint-epoch0002.dsw").exists());
    assert!(f
        .path("full/checkpoints/checkpoint-epoch0002.json")
        .exists());

    let ck = f.path("full/checkpoints/checkpoint-epoch0002.dsw");
    f.train("resumed", 4, &["--resume", p(&ck)]);
    assert_eq!(
        fs::read_to_string(f.path("resumed/trainlog.csv")).unwrap(),
        log
    );
    assert_eq!(
        fs::read(f.path("resumed/model.dsw")).unwrap(),
        fs::read(f.path("full/model.dsw")).unwrap()
    );

    let model = f.path("full/model.dsw");
    let input = f.path("data/mixed.esg");
    for mode in ["signal", "artifact"] {
        ok(&[
            "denoise",
            "--model",
            p(&model),
            "--input",
            p(&input),
            "--mode",
            mode,
            "--out",
            p(&f.path(mode)),
        ]);
    }
    let signal = load_segments(f.path("signal/denoised.esg")).unwrap();
    let artifact = load_segments(f.path("artifact/artifact.esg")).unwrap();
    let original = load_segments(&input).unwrap();
    assert_eq!(
        (signal.len(), signal.segment_len),
        (original.len(), original.segment_len)
    );
    assert_eq!(
        (artifact.len(), artifact.segment_len),
        (original.len(), original.segment_len)
    );

    // Scaling the input by 10 scales the output by 10.
    let scaled = SegmentFile::new(
        original.segment_len,
        original
            .segments
            .iter()
            .map(|s| s.iter().map(|v| 10.0 * v).collect())
            .collect(),
    )
    .unwrap();
    save_segments(f.path("scaled.esg"), &scaled).unwrap();
    ok(&[
        "denoise",
        "--model",
        p(&model),
        "--input",
        p(&f.path("scaled.esg")),
        "--out",
        p(&f.path("scaled_out")),
    ]);
    let big = load_segments(f.path("scaled_out/denoised.esg")).unwrap();
    for (a, b) in big
        .segments
        .iter()
        .flatten()
        .zip(signal.segments.iter().flatten())
    {
        assert!((a - 10.0 * b).abs() <= 1e-4 * (1.0 + a.abs()), "{a} vs {b}");
    }
}

#[test]
fn eval_methods_and_buckets() {
    let f = Fixture::new();
    f.synth("wide", 300, 9);
    let out = f.path("eval");
    // Identity needs no model.
    ok(&[
        "eval",
        "--data",
        p(&f.path("wide")),
        "--methods",
        "identity,oracle",
        "--per-snr",
        "--out",
        p(&out),
    ]);
    let per_snr = fs::read_to_string(out.join("identity_per_snr.csv")).unwrap();
    assert_eq!(per_snr.lines().count(), 1 + 7, "buckets -5..=1");
    let oracle: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("oracle_summary.json")).unwrap())
            .unwrap();
    assert_eq!(oracle["rrmse_t_mean"], 0.0);
    assert!(
        fs::read_to_string(out.join("summary.csv"))
            .unwrap()
            .lines()
            .count()
            == 3
    );

    let bad = deepsep(&[
        "eval",
        "--data",
        p(&f.path("wide")),
        "--methods",
        "identity,ica",
        "--out",
        p(&out),
    ]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("ica"));
    let no_model = deepsep(&[
        "eval",
        "--data",
        p(&f.path("wide")),
        "--methods",
        "deepsep",
        "--out",
        p(&out),
    ]);
    assert_eq!(no_model.status.code(), Some(1));
}

#[test]
fn per_snr_has_ten_buckets_over_the_default_range() {
    let f = Fixture::new();
    ok(&[
        "synth",
        "--eeg",
        p(&f.path("eeg/eeg.esg")),
        "--artifact",
        p(&f.path("eog/eog.esg")),
        "--count",
        "400",
        "--seed",
        "5",
        "--out",
        p(&f.path("full_range")),
    ]);
    ok(&[
        "eval",
        "--data",
        p(&f.path("full_range")),
        "--methods",
        "identity",
        "--per-snr",
        "--out",
        p(&f.path("e")),
    ]);
    let csv = fs::read_to_string(f.path("e/identity_per_snr.csv")).unwrap();
    let snrs: Vec<i64> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    assert_eq!(snrs, (-7..=2).collect::<Vec<_>>());
}

#[test]
fn erp_window_and_bounds() {
    let tmp = tempfile::tempdir().unwrap();
    let rec = tmp.path().join("rec.esg");
    let signal: Vec<f64> = (0..2048).map(|i| (i as f64 * 0.01).sin()).collect();
    let file =
        SegmentFile::new(1024, vec![signal[..1024].to_vec(), signal[1024..].to_vec()]).unwrap();
    save_segments(&rec, &file).unwrap();
    let mut m = Manifest::new("eeg", 256.0, &file, "test");
    m.channels = Some(1);
    m.save(Manifest::path_for(&rec)).unwrap();
    let events = tmp.path().join("events.txt");
    fs::write(&events, "# onsets\n100\n900\n1500\n").unwrap();
    let out = tmp.path().join("erp");
    ok(&[
        "erp",
        "--input",
        p(&rec),
        "--events",
        p(&events),
        "--out",
        p(&out),
    ]);
    let csv = fs::read_to_string(out.join("erp.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 128);
    assert!(csv.lines().nth(1).unwrap().starts_with("-25,"));

    fs::write(&events, "100\n2040\n").unwrap();
    let bad = deepsep(&[
        "erp",
        "--input",
        p(&rec),
        "--events",
        p(&events),
        "--out",
        p(&out),
    ]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("event #1 at sample 2040"));
}

#[test]
fn latent_dump_and_gradcheck() {
    let f = Fixture::new();
    f.train("m", 1, &[]);
    let out = f.path("latent");
    ok(&[
        "dump-latent",
        "--model",
        p(&f.path("m/model.dsw")),
        "--input",
        p(&f.path("data/mixed.esg")),
        "--index",
        "3",
        "--svg",
        "--out",
        p(&out),
    ]);
    let att = fs::read_to_string(out.join("attenuation.csv")).unwrap();
    assert_eq!(
        att.lines().count(),
        8,
        "tiny network embeds into 8 channels"
    );
    assert!(att
        .lines()
        .flat_map(|l| l
            .split(',')
            .map(|v| v.parse::<f64>().unwrap())
            .collect::<Vec<_>>())
        .all(|v| v > 0.0 && v < 1.0));
    assert_eq!(
        fs::read_to_string(out.join("embedding.csv"))
            .unwrap()
            .lines()
            .count(),
        8
    );
    assert!(out.join("attenuation.svg").exists());

    ok(&["gradcheck", "--length", "24", "--out", p(&f.path("gc"))]);
    let strict = deepsep(&[
        "gradcheck",
        "--length",
        "24",
        "--tolerance",
        "0",
        "--out",
        p(&f.path("gc0")),
    ]);
    assert_eq!(strict.status.code(), Some(3));
}

#[test]
fn failures_map_to_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(deepsep(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(deepsep(&["synth", "--count", "3"]).status.code(), Some(1));
    let missing = deepsep(&[
        "spectrogram",
        "--input",
        "/no/such/file.esg",
        "--out",
        p(tmp.path()),
    ]);
    assert_eq!(missing.status.code(), Some(2));
    let garbage = tmp.path().join("garbage.esg");
    fs::write(&garbage, b"NOPE and more bytes").unwrap();
    let bad = deepsep(&[
        "spectrogram",
        "--input",
        p(&garbage),
        "--out",
        p(tmp.path()),
    ]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("magic"));
    assert_eq!(deepsep(&["--help"]).status.code(), Some(0));
}

#[test]
fn spectrogram_csv_shape() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("tone.esg");
    let tone: Vec<f64> = (0..512)
        .map(|i| (2.0 * std::f64::consts::PI * 32.0 * i as f64 / 256.0).sin())
        .collect();
    save_segments(&path, &SegmentFile::new(512, vec![tone]).unwrap()).unwrap();
    ok(&[
        "spectrogram",
        "--input",
        p(&path),
        "--svg",
        "--out",
        p(&tmp.path().join("s")),
    ]);
    let csv = fs::read_to_string(tmp.path().join("s/spectrogram.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 1 + 33, "64-sample window gives 33 bins");
    assert_eq!(
        rows[0].split(',').count(),
        1 + 15,
        "(512 - 64) / 32 + 1 frames"
    );
    assert!(tmp.path().join("s/spectrogram.svg").exists());
}
