mod commands;
mod dataset;
mod failure;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use failure::Failure;

/// Single-channel EEG artifact removal with a gated encoder/decoder network.
#[derive(Debug, Parser, Serialize)]
#[command(name = "deepsep", version, propagate_version = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Generate a pool of simulated clean EEG, EOG or EMG segments.
    Simulate(SimulateArgs),
    /// Mix clean EEG with artifacts at random SNRs.
    Synth(SynthArgs),
    /// Train a network on one or more synthesized sets.
    Train(TrainArgs),
    /// Run a trained network over a (multi-channel) segment file.
    Denoise(DenoiseArgs),
    /// Score methods on a synthesized test set.
    Eval(EvalArgs),
    /// Score methods at every integer SNR from -7 to 2 dB.
    Sweep(SweepArgs),
    /// Epoch a recording around events and average.
    ///
    /// Epoch bounds are converted to samples by rounding down, each on its own:
    /// pre = floor(pre_ms * fs / 1000), post = floor(post_ms * fs / 1000). The
    /// event sample is included, so an epoch has pre + post + 1 samples.
    ///
    /// No filtering is applied; band-pass (e.g. 0.5-75 Hz) and notch filtering,
    /// if wanted, belong before denoising and epoching.
    Erp(ErpArgs),
    /// Compare analytic and finite-difference gradients.
    Gradcheck(GradcheckArgs),
    /// Short-time magnitude spectrum of one segment.
    Spectrogram(SpectrogramArgs),
    /// Write the embedding, attenuation and gated embedding of one segment.
    DumpLatent(DumpLatentArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum KindArg {
    Eeg,
    Eog,
    Emg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ArtifactArg {
    Eog,
    Emg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    Signal,
    Artifact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchArg {
    Default,
    Tiny,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowArg {
    Hann,
    Rectangular,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub kind: KindArg,
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value_t = 512)]
    pub length: usize,
    #[arg(long, default_value_t = 256.0)]
    pub fs: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    /// Clean EEG segment file.
    #[arg(long)]
    pub eeg: PathBuf,
    /// Artifact segment file (EOG or EMG).
    #[arg(long)]
    pub artifact: PathBuf,
    /// Artifact type; defaults to the artifact manifest's content.
    #[arg(long, value_enum)]
    pub artifact_kind: Option<ArtifactArg>,
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value_t = -7.0, allow_negative_numbers = true)]
    pub snr_min: f64,
    #[arg(long, default_value_t = 2.0, allow_negative_numbers = true)]
    pub snr_max: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Directory written by `synth`; repeat to train one joint model.
    #[arg(long, required = true)]
    pub data: Vec<PathBuf>,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Probabilities of the raw->clean, clean->clean and artifact->artifact cases.
    #[arg(long, default_value = "0.8,0.1,0.1")]
    pub ratios: String,
    #[arg(long, default_value_t = 10)]
    pub checkpoint_every: usize,
    #[arg(long, default_value_t = 0.1)]
    pub validation: f64,
    #[arg(long, value_enum, default_value_t = ArchArg::Default)]
    pub arch: ArchArg,
    /// Keep only samples contaminated by this artifact type.
    #[arg(long, value_enum)]
    pub artifact_filter: Option<ArtifactArg>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Also write per-epoch wall-clock times to timing.csv.
    #[arg(long)]
    pub timing: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct DenoiseArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Segment file; a `channels` entry in its manifest marks channel-major data.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Signal)]
    pub mode: ModeArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    /// Required when `deepsep` is among the methods.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    /// Comma-separated: deepsep, lms, identity, oracle.
    #[arg(long, default_value = "deepsep,lms,identity")]
    pub methods: String,
    /// Also write scores grouped by integer SNR.
    #[arg(long)]
    pub per_snr: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SweepArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub eeg: PathBuf,
    #[arg(long)]
    pub artifact: PathBuf,
    #[arg(long, default_value = "deepsep,lms,identity")]
    pub methods: String,
    /// Mixtures per SNR level.
    #[arg(long, default_value_t = 100)]
    pub per_level: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub svg: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ErpArgs {
    /// Recording as a segment file; a `channels` entry in the manifest splits
    /// it channel-major, otherwise each segment is one channel.
    #[arg(long)]
    pub input: PathBuf,
    /// Event sample indices, one per line.
    #[arg(long)]
    pub events: PathBuf,
    /// Milliseconds before each event.
    #[arg(long, default_value_t = 100.0)]
    pub pre: f64,
    /// Milliseconds after each event.
    #[arg(long, default_value_t = 400.0)]
    pub post: f64,
    /// Sampling rate; defaults to the manifest's, else 256 Hz.
    #[arg(long)]
    pub fs: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct GradcheckArgs {
    #[arg(long, value_enum, default_value_t = ArchArg::Tiny)]
    pub arch: ArchArg,
    #[arg(long, default_value_t = 32)]
    pub length: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SpectrogramArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Segment to analyse.
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    #[arg(long)]
    pub fs: Option<f64>,
    #[arg(long, default_value_t = 64)]
    pub window: usize,
    #[arg(long, default_value_t = 32)]
    pub hop: usize,
    #[arg(long, value_enum, default_value_t = WindowArg::Hann)]
    pub taper: WindowArg,
    #[arg(long)]
    pub svg: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct DumpLatentArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::Signal)]
    pub mode: ModeArg,
    #[arg(long)]
    pub svg: bool,
    #[arg(long)]
    pub out: PathBuf,
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var("DEEPSEP_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        Failure::usage(format!(
            "DEEPSEP_THREADS must be a positive integer, got {raw:?}"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::usage(e.to_string()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = configure_threads().and_then(|_| commands::run(&cli));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
