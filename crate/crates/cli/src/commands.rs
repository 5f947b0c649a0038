use std::fs;
use std::io::BufWriter;
use std::path::Path;

use rayon::prelude::*;

use deepsep::datagen::simulate::{simulate_pool, SimConfig};
use deepsep::datagen::{
    make_training_cases, synthesize, Manifest, MixRatios, SegmentFile, SegmentKind, SnrRange,
};
use deepsep::erp::{self, EpochWindow};
use deepsep::metrics::{spearman, spectrogram, Aggregate, Window};
use deepsep::model::{
    load_weights, save_weights, separate, separate_with_latents, ArchConfig, IndicatorMode,
    NetworkParams,
};
use deepsep::trainer::{
    evaluate, gradcheck_cases, snr_sweep, Denoiser, GradcheckOptions, IdentityDenoiser,
    LmsDenoiser, NetworkDenoiser, OracleDenoiser, TrainConfig, Trainer,
};

use crate::dataset::{self, ARTIFACT, CLEAN, MIXED};
use crate::failure::{CmdResult, Context, Failure};
use crate::svg;
use crate::*;

pub fn run(cli: &Cli) -> CmdResult {
    match &cli.command {
        Command::Simulate(a) => simulate(cli, a),
        Command::Synth(a) => synth(cli, a),
        Command::Train(a) => train(cli, a),
        Command::Denoise(a) => denoise(cli, a),
        Command::Eval(a) => eval(cli, a),
        Command::Sweep(a) => sweep(cli, a),
        Command::Erp(a) => erp_cmd(cli, a),
        Command::Gradcheck(a) => gradcheck(cli, a),
        Command::Spectrogram(a) => spectrogram_cmd(cli, a),
        Command::DumpLatent(a) => dump_latent(cli, a),
    }
}

impl From<KindArg> for SegmentKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Eeg => SegmentKind::CleanEeg,
            KindArg::Eog => SegmentKind::Eog,
            KindArg::Emg => SegmentKind::Emg,
        }
    }
}

impl From<ArtifactArg> for SegmentKind {
    fn from(k: ArtifactArg) -> Self {
        match k {
            ArtifactArg::Eog => SegmentKind::Eog,
            ArtifactArg::Emg => SegmentKind::Emg,
        }
    }
}

impl From<ModeArg> for IndicatorMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Signal => IndicatorMode::Signal,
            ModeArg::Artifact => IndicatorMode::Artifact,
        }
    }
}

impl From<ArchArg> for ArchConfig {
    fn from(a: ArchArg) -> Self {
        match a {
            ArchArg::Default => ArchConfig::default(),
            ArchArg::Tiny => ArchConfig::tiny(),
        }
    }
}

fn data_error(msg: String) -> Failure {
    Failure::from(anyhow::anyhow!(msg))
}

fn write_text(path: &Path, text: &str) -> CmdResult {
    fs::write(path, text).ctx(format!("writing {}", path.display()))
}

fn create(path: &Path) -> CmdResult<BufWriter<fs::File>> {
    Ok(BufWriter::new(
        fs::File::create(path).ctx(format!("creating {}", path.display()))?,
    ))
}

fn csv_rows(
    path: &Path,
    header: &[String],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> CmdResult {
    let mut w = csv::Writer::from_writer(create(path)?);
    let what = || format!("writing {}", path.display());
    w.write_record(header).ctx(what())?;
    for r in rows {
        w.write_record(&r).ctx(what())?;
    }
    w.flush().ctx(what())
}

fn simulate(cli: &Cli, a: &SimulateArgs) -> CmdResult {
    if a.length < 2 || !(a.fs > 0.0) {
        return Err(Failure::usage(
            "--length must be at least 2 and --fs positive",
        ));
    }
    dataset::prepare_out_dir(&a.out, cli)?;
    let kind = SegmentKind::from(a.kind);
    let pool = simulate_pool(
        kind,
        a.count,
        SimConfig {
            segment_len: a.length,
            fs: a.fs,
        },
        a.seed,
    );
    let file = SegmentFile::new(a.length, pool.into_iter().map(|s| s.samples).collect())
        .ctx("assembling segments")?;
    let manifest = Manifest::new(
        kind.label(),
        a.fs,
        &file,
        format!("simulated {} pool, seed {}", kind.label(), a.seed),
    );
    dataset::save(
        &a.out.join(format!("{}.esg", kind.label())),
        &file,
        &manifest,
    )?;
    eprintln!(
        "wrote {} {} segments of {} samples",
        file.len(),
        kind.label(),
        a.length
    );
    Ok(())
}

fn synth(cli: &Cli, a: &SynthArgs) -> CmdResult {
    let range = SnrRange {
        min: a.snr_min,
        max: a.snr_max,
    };
    range.validate().map_err(|_| {
        Failure::usage(format!(
            "--snr-min {} must not exceed --snr-max {}",
            a.snr_min, a.snr_max
        ))
    })?;
    let eeg = dataset::load(&a.eeg)?;
    let art = dataset::load(&a.artifact)?;
    let kind = match (a.artifact_kind, art.kind()) {
        (Some(k), _) => SegmentKind::from(k),
        (None, Some(k)) if k != SegmentKind::CleanEeg => k,
        _ => {
            return Err(Failure::usage(format!(
                "cannot tell the artifact type of {}; pass --artifact-kind",
                a.artifact.display()
            )))
        }
    };
    if !eeg.file.is_empty() && !art.file.is_empty() && eeg.file.segment_len != art.file.segment_len
    {
        return Err(data_error(format!(
            "EEG segments have {} samples, artifact segments {}",
            eeg.file.segment_len, art.file.segment_len
        )));
    }
    let fs_hz = eeg.fs();
    let len = eeg.file.segment_len;
    let eeg_pool = dataset::pool(eeg, SegmentKind::CleanEeg);
    let art_pool = dataset::pool(art, kind);
    let samples = synthesize(&eeg_pool, &art_pool, range, a.count, a.seed).ctx("mixing")?;

    dataset::prepare_out_dir(&a.out, cli)?;
    let provenance = format!(
        "mixed at SNR in [{}, {}] dB, seed {}",
        a.snr_min, a.snr_max, a.seed
    );
    let file = |rows: Vec<Vec<f64>>| SegmentFile::new(len, rows).ctx("assembling segments");
    let mixed = file(samples.iter().map(|s| s.y.clone()).collect())?;
    let clean = file(samples.iter().map(|s| s.x.clone()).collect())?;
    let artifact = file(samples.iter().map(|s| s.scaled_artifact()).collect())?;

    let mut m = Manifest::new("mixed", fs_hz, &mixed, provenance.clone());
    m.samples = samples.iter().map(|s| s.meta()).collect();
    dataset::save(&a.out.join(MIXED), &mixed, &m)?;
    dataset::save(
        &a.out.join(CLEAN),
        &clean,
        &Manifest::new("eeg", fs_hz, &clean, provenance.clone()),
    )?;
    dataset::save(
        &a.out.join(ARTIFACT),
        &artifact,
        &Manifest::new(kind.label(), fs_hz, &artifact, provenance),
    )?;
    eprintln!("wrote {} {} mixtures", samples.len(), kind.label());
    Ok(())
}

fn parse_ratios(s: &str) -> CmdResult<MixRatios> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| {
            Failure::usage(format!(
                "--ratios expects three comma-separated numbers, got {s:?}"
            ))
        })?;
    let [a, b, c] = parts[..] else {
        return Err(Failure::usage(format!(
            "--ratios expects three numbers, got {}",
            parts.len()
        )));
    };
    MixRatios::new(a, b, c).map_err(|e| Failure::usage(format!("--ratios: {e}")))
}

fn train(cli: &Cli, a: &TrainArgs) -> CmdResult {
    let ratios = parse_ratios(&a.ratios)?;
    let config = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch,
        lr: a.lr,
        seed: a.seed,
        mix_ratios: ratios,
        checkpoint_every: a.checkpoint_every,
        validation_fraction: a.validation,
    };
    config
        .validate()
        .map_err(|e| Failure::usage(e.to_string()))?;

    let (mut samples, mut clean, mut artifacts) = (Vec::new(), Vec::new(), Vec::new());
    for dir in &a.data {
        let set = dataset::load_synth(dir)?;
        let keep = |k: SegmentKind| {
            a.artifact_filter
                .map_or(true, |f| SegmentKind::from(f) == k)
        };
        samples.extend(set.samples.into_iter().filter(|s| keep(s.artifact)));
        clean.extend(set.clean);
        artifacts.extend(set.artifacts.into_iter().filter(|s| keep(s.kind)));
    }
    if samples.is_empty() {
        return Err(data_error(
            "no training samples left after filtering".into(),
        ));
    }
    let cases = make_training_cases(&samples, &clean, &artifacts, ratios, a.seed)
        .ctx("building training cases")?;

    let mut trainer = match &a.resume {
        Some(path) => {
            Trainer::resume(path, config).ctx(format!("resuming from {}", path.display()))?
        }
        None => {
            let params = NetworkParams::init(a.arch.into(), a.seed).ctx("initializing network")?;
            Trainer::new(params, config).ctx("configuring training")?
        }
    };
    dataset::prepare_out_dir(&a.out, cli)?;
    eprintln!(
        "training on {} cases, {} parameters, epochs {}..={}",
        cases.len(),
        trainer.params.num_parameters(),
        trainer.completed_epochs() + 1,
        a.epochs
    );
    trainer
        .run(&cases, Some(&a.out.join("checkpoints")), |e| {
            eprintln!(
                "epoch {:>3}  train {:.5}  val {}  ({:.1}s)",
                e.epoch,
                e.train_loss,
                e.val_loss.map_or("-".into(), |v| format!("{v:.5}")),
                e.wall_seconds
            );
        })
        .ctx("training")?;

    save_weights(&trainer.params, a.out.join("model.dsw")).ctx("writing model.dsw")?;
    trainer
        .log()
        .write_csv(create(&a.out.join("trainlog.csv"))?)
        .ctx("writing trainlog.csv")?;
    if a.timing {
        trainer
            .log()
            .write_timing_csv(create(&a.out.join("timing.csv"))?)
            .ctx("writing timing.csv")?;
    }
    Ok(())
}

fn check_length(len: usize) -> CmdResult {
    if len < deepsep::model::MIN_LENGTH {
        return Err(data_error(format!(
            "segments of {len} samples are shorter than the network's minimum of {}",
            deepsep::model::MIN_LENGTH
        )));
    }
    Ok(())
}

fn denoise(cli: &Cli, a: &DenoiseArgs) -> CmdResult {
    let params = load_weights(&a.model).ctx(format!("loading {}", a.model.display()))?;
    let input = dataset::load(&a.input)?;
    if !input.file.is_empty() {
        check_length(input.file.segment_len)?;
    }
    let mode = IndicatorMode::from(a.mode);
    let out: Vec<Vec<f64>> = input
        .file
        .segments
        .par_iter()
        .map(|s| separate(&params, s, mode))
        .collect::<Result<_, _>>()
        .ctx("running the network")?;
    if let Some(i) = out.iter().position(|s| s.iter().any(|v| !v.is_finite())) {
        return Err(Failure::numerical(format!(
            "network output for segment {i} is not finite"
        )));
    }
    let file = SegmentFile::new(input.file.segment_len, out).ctx("assembling output")?;
    let content = match a.mode {
        ModeArg::Signal => "denoised",
        ModeArg::Artifact => "artifact",
    };
    let mut manifest = Manifest::new(
        content,
        input.fs(),
        &file,
        format!("{content} output of {}", a.model.display()),
    );
    manifest.channels = input.channels();
    dataset::prepare_out_dir(&a.out, cli)?;
    dataset::save(&a.out.join(format!("{content}.esg")), &file, &manifest)?;
    eprintln!(
        "wrote {} segments{}",
        file.len(),
        manifest
            .channels
            .map_or(String::new(), |c| format!(" ({c} channels)"))
    );
    Ok(())
}

const METHODS: [&str; 4] = ["deepsep", "lms", "identity", "oracle"];

fn parse_methods(s: &str) -> CmdResult<Vec<String>> {
    let methods: Vec<String> = s
        .split(',')
        .map(|m| m.trim().to_ascii_lowercase())
        .filter(|m| !m.is_empty())
        .collect();
    if methods.is_empty() {
        return Err(Failure::usage("--methods is empty"));
    }
    if let Some(bad) = methods.iter().find(|m| !METHODS.contains(&m.as_str())) {
        return Err(Failure::usage(format!(
            "unknown method {bad:?}; choose from {}",
            METHODS.join(", ")
        )));
    }
    Ok(methods)
}

fn load_model_for(
    methods: &[String],
    model: &Option<std::path::PathBuf>,
) -> CmdResult<Option<NetworkParams>> {
    if !methods.iter().any(|m| m == "deepsep") {
        return Ok(None);
    }
    let path = model
        .as_ref()
        .ok_or_else(|| Failure::usage("method deepsep needs --model"))?;
    Ok(Some(
        load_weights(path).ctx(format!("loading {}", path.display()))?,
    ))
}

fn denoiser<'a>(name: &str, params: Option<&'a NetworkParams>) -> Box<dyn Denoiser + 'a> {
    match name {
        "deepsep" => Box::new(NetworkDenoiser {
            params: params.expect("model loaded for deepsep"),
        }),
        "lms" => Box::new(LmsDenoiser::default()),
        "identity" => Box::new(IdentityDenoiser),
        _ => Box::new(OracleDenoiser),
    }
}

fn summary_row(a: &Aggregate) -> Vec<String> {
    vec![
        a.method.clone(),
        a.artifact.clone(),
        a.n.to_string(),
        a.rrmse_t_mean.to_string(),
        a.rrmse_t_std.to_string(),
        a.rrmse_s_mean.to_string(),
        a.rrmse_s_std.to_string(),
        a.cc_mean.to_string(),
        a.cc_std.to_string(),
    ]
}

fn eval(cli: &Cli, a: &EvalArgs) -> CmdResult {
    let methods = parse_methods(&a.methods)?;
    let params = load_model_for(&methods, &a.model)?;
    let set = dataset::load_synth(&a.data)?;
    dataset::prepare_out_dir(&a.out, cli)?;
    let mut summaries = Vec::new();
    for m in &methods {
        let d = denoiser(m, params.as_ref());
        let report = evaluate(d.as_ref(), &set.samples, set.fs).ctx(format!("evaluating {m}"))?;
        report
            .write_csv(create(&a.out.join(format!("{m}_scores.csv")))?)
            .ctx("writing scores")?;
        write_text(
            &a.out.join(format!("{m}_summary.json")),
            &(report.aggregate_json().ctx("summarizing")? + "\n"),
        )?;
        if a.per_snr {
            report
                .write_per_snr_csv(create(&a.out.join(format!("{m}_per_snr.csv")))?)
                .ctx("writing per-SNR scores")?;
        }
        let agg = report.aggregate();
        println!(
            "{:<9} n={:<5} rrmse_t {:.4}  rrmse_s {:.4}  cc {:.4}",
            m, agg.n, agg.rrmse_t_mean, agg.rrmse_s_mean, agg.cc_mean
        );
        summaries.push(agg);
    }
    let header: Vec<String> = [
        "method",
        "artifact",
        "n",
        "rrmse_t_mean",
        "rrmse_t_std",
        "rrmse_s_mean",
        "rrmse_s_std",
        "cc_mean",
        "cc_std",
    ]
    .map(String::from)
    .to_vec();
    csv_rows(
        &a.out.join("summary.csv"),
        &header,
        summaries.iter().map(summary_row),
    )
}

fn sweep(cli: &Cli, a: &SweepArgs) -> CmdResult {
    let methods = parse_methods(&a.methods)?;
    if a.per_level == 0 {
        return Err(Failure::usage("--per-level must be at least 1"));
    }
    let params = load_model_for(&methods, &a.model)?;
    let eeg = dataset::load(&a.eeg)?;
    let art = dataset::load(&a.artifact)?;
    let fs_hz = eeg.fs();
    let kind = art
        .kind()
        .filter(|k| *k != SegmentKind::CleanEeg)
        .unwrap_or(SegmentKind::Eog);
    let eeg_pool = dataset::pool(eeg, SegmentKind::CleanEeg);
    let art_pool = dataset::pool(art, kind);
    let levels: Vec<i64> = (-7..=2).collect();
    dataset::prepare_out_dir(&a.out, cli)?;

    let mut rows = Vec::new();
    let mut trend = serde_json::Map::new();
    let mut series = Vec::new();
    for m in &methods {
        let d = denoiser(m, params.as_ref());
        let result = snr_sweep(
            d.as_ref(),
            &eeg_pool,
            &art_pool,
            &levels,
            a.per_level,
            a.seed,
            fs_hz,
        )
        .ctx(format!("sweeping {m}"))?;
        let snr: Vec<f64> = result.iter().map(|l| l.snr_db as f64).collect();
        let cc: Vec<f64> = result.iter().map(|l| l.aggregate.cc_mean).collect();
        let rho = spearman(&snr, &cc).ok();
        trend.insert(
            m.clone(),
            serde_json::json!({ "spearman_snr_cc": rho, "levels": result }),
        );
        println!(
            "{m:<9} spearman(snr, cc) = {}",
            rho.map_or("undefined".into(), |r| format!("{r:.3}"))
        );
        for l in &result {
            rows.push(vec![
                m.clone(),
                l.snr_db.to_string(),
                l.aggregate.n.to_string(),
                l.aggregate.rrmse_t_mean.to_string(),
                l.aggregate.rrmse_s_mean.to_string(),
                l.aggregate.cc_mean.to_string(),
            ]);
        }
        series.push((m.clone(), snr.into_iter().zip(cc).collect::<Vec<_>>()));
    }
    let header: Vec<String> = [
        "method",
        "snr_db",
        "n",
        "rrmse_t_mean",
        "rrmse_s_mean",
        "cc_mean",
    ]
    .map(String::from)
    .to_vec();
    csv_rows(&a.out.join("sweep.csv"), &header, rows)?;
    write_text(
        &a.out.join("sweep.json"),
        &(serde_json::to_string_pretty(&trend).ctx("serializing sweep")? + "\n"),
    )?;
    if a.svg {
        write_text(
            &a.out.join("sweep_cc.svg"),
            &svg::line_chart("mean CC per SNR", "SNR (dB)", "CC", &series),
        )?;
    }
    Ok(())
}

fn read_events(path: &Path) -> CmdResult<Vec<usize>> {
    let text = fs::read_to_string(path).ctx(format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .map(|(i, l)| (i, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            l.parse::<usize>().map_err(|_| {
                data_error(format!(
                    "{} line {}: {l:?} is not a sample index",
                    path.display(),
                    i + 1
                ))
            })
        })
        .collect()
}

fn erp_cmd(cli: &Cli, a: &ErpArgs) -> CmdResult {
    let input = dataset::load(&a.input)?;
    let fs_hz = a.fs.unwrap_or_else(|| input.fs());
    if !(fs_hz > 0.0) || a.pre < 0.0 || a.post < 0.0 {
        return Err(Failure::usage(
            "--fs must be positive and --pre/--post non-negative",
        ));
    }
    let events = read_events(&a.events)?;
    let window = EpochWindow::from_ms(a.pre, a.post, fs_hz);
    let per_channel = input.channels().map_or(1, |c| input.file.len() / c);
    let channels: Vec<Vec<f64>> = input
        .file
        .segments
        .chunks(per_channel.max(1))
        .map(|c| c.concat())
        .collect();
    let averages: Vec<Vec<f64>> = channels
        .iter()
        .enumerate()
        .map(|(c, signal)| erp::average(signal, &events, window).ctx(format!("channel {c}")))
        .collect::<Result<_, _>>()?;

    dataset::prepare_out_dir(&a.out, cli)?;
    let mut header = vec!["sample".to_string(), "time_ms".to_string()];
    header.extend((0..averages.len()).map(|c| format!("ch{c}")));
    let rows = (0..window.len()).map(|i| {
        let offset = i as i64 - window.pre as i64;
        let mut r = vec![
            offset.to_string(),
            (offset as f64 * 1000.0 / fs_hz).to_string(),
        ];
        r.extend(averages.iter().map(|ch| ch[i].to_string()));
        r
    });
    csv_rows(&a.out.join("erp.csv"), &header, rows)?;
    eprintln!(
        "averaged {} epochs of {} samples ({} before, {} after the event) over {} channels",
        events.len(),
        window.len(),
        window.pre,
        window.post,
        averages.len()
    );
    Ok(())
}

fn gradcheck(cli: &Cli, a: &GradcheckArgs) -> CmdResult {
    check_length(a.length)?;
    let options = GradcheckOptions {
        tolerance: a.tolerance,
        ..GradcheckOptions::default()
    };
    let reports =
        gradcheck_cases(a.arch.into(), a.length, a.seed, options).ctx("gradient check")?;
    dataset::prepare_out_dir(&a.out, cli)?;
    write_text(
        &a.out.join("gradcheck.json"),
        &(serde_json::to_string_pretty(&reports).ctx("serializing report")? + "\n"),
    )?;
    let header: Vec<String> = [
        "case", "tensor", "len", "compared", "max_rel", "mean_rel", "max_abs",
    ]
    .map(String::from)
    .to_vec();
    let rows = reports.iter().flat_map(|r| {
        let case = r.case.map(|c| c.number()).unwrap_or(0).to_string();
        r.tensors.iter().map(move |t| {
            vec![
                case.clone(),
                t.name.clone(),
                t.len.to_string(),
                t.compared.to_string(),
                t.max_rel.to_string(),
                t.mean_rel.to_string(),
                t.max_abs.to_string(),
            ]
        })
    });
    csv_rows(&a.out.join("gradcheck.csv"), &header, rows)?;
    let mut failed = Vec::new();
    for r in &reports {
        let verdict = if r.passed() { "ok" } else { "FAILED" };
        println!(
            "case {:?}: max rel {:.3e}, mean rel {:.3e} over {} entries ({} below floor) {verdict}",
            r.case.unwrap_or(deepsep::datagen::CaseKind::RawToClean),
            r.max_rel,
            r.mean_rel,
            r.compared,
            r.skipped
        );
        if !r.passed() {
            failed.push(format!("{:?}", r.case));
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::numerical(format!(
            "relative error above {} for {}",
            a.tolerance,
            failed.join(", ")
        )))
    }
}

fn segment_at(loaded: &dataset::Loaded, index: usize, path: &Path) -> CmdResult<Vec<f64>> {
    loaded.file.segments.get(index).cloned().ok_or_else(|| {
        data_error(format!(
            "{} has {} segments, no index {index}",
            path.display(),
            loaded.file.len()
        ))
    })
}

fn matrix_csv(path: &Path, rows: &[Vec<f64>]) -> CmdResult {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(create(path)?);
    for r in rows {
        w.write_record(r.iter().map(|v| v.to_string()))
            .ctx(format!("writing {}", path.display()))?;
    }
    w.flush().ctx(format!("writing {}", path.display()))
}

fn spectrogram_cmd(cli: &Cli, a: &SpectrogramArgs) -> CmdResult {
    let input = dataset::load(&a.input)?;
    let x = segment_at(&input, a.index, &a.input)?;
    let fs_hz = a.fs.unwrap_or_else(|| input.fs());
    let taper = match a.taper {
        WindowArg::Hann => Window::Hann,
        WindowArg::Rectangular => Window::Rectangular,
    };
    let s = spectrogram(&x, fs_hz, a.window, a.hop, taper).ctx("spectrogram")?;
    dataset::prepare_out_dir(&a.out, cli)?;
    let mut header = vec!["freq_hz".to_string()];
    header.extend(s.times.iter().map(|t| format!("t={t}")));
    let rows = s.freqs.iter().zip(&s.magnitude).map(|(f, row)| {
        let mut r = vec![f.to_string()];
        r.extend(row.iter().map(|v| v.to_string()));
        r
    });
    csv_rows(&a.out.join("spectrogram.csv"), &header, rows)?;
    if a.svg {
        write_text(
            &a.out.join("spectrogram.svg"),
            &svg::heatmap("magnitude (frequency up, time right)", &s.magnitude),
        )?;
    }
    Ok(())
}

fn dump_latent(cli: &Cli, a: &DumpLatentArgs) -> CmdResult {
    let params = load_weights(&a.model).ctx(format!("loading {}", a.model.display()))?;
    let input = dataset::load(&a.input)?;
    let x = segment_at(&input, a.index, &a.input)?;
    check_length(x.len())?;
    let (output, latents) =
        separate_with_latents(&params, &x, a.mode.into()).ctx("running the network")?;
    dataset::prepare_out_dir(&a.out, cli)?;
    let rows = |t: &deepsep::autodiff::Tensor| -> Vec<Vec<f64>> {
        t.data().chunks(x.len()).map(<[f64]>::to_vec).collect()
    };
    for (name, t) in [
        ("embedding", &latents.embedding),
        ("attenuation", &latents.attenuation),
        ("attenuated", &latents.attenuated),
    ] {
        let m = rows(t);
        matrix_csv(&a.out.join(format!("{name}.csv")), &m)?;
        if a.svg {
            write_text(&a.out.join(format!("{name}.svg")), &svg::heatmap(name, &m))?;
        }
    }
    matrix_csv(&a.out.join("output.csv"), &[x.clone(), output])?;
    Ok(())
}
