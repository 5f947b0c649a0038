//! On-disk layout of segment pools and synthesized sets.

use std::fs;
use std::path::Path;

use serde::Serialize;

use deepsep::datagen::{
    load_segments, pool_from, save_segments, Manifest, MixedSample, Segment, SegmentFile,
    SegmentKind, DEFAULT_FS,
};

use crate::failure::{CmdResult, Context, Failure};
use crate::Cli;

pub const MIXED: &str = "mixed.esg";
pub const CLEAN: &str = "clean.esg";
pub const ARTIFACT: &str = "artifact.esg";
pub const RUN_CONFIG: &str = "run_config.json";

#[derive(Serialize)]
struct RunConfig<'a> {
    tool: &'static str,
    version: &'static str,
    formats: Formats,
    #[serde(flatten)]
    cli: &'a Cli,
}

#[derive(Serialize)]
struct Formats {
    segments: &'static str,
    weights: &'static str,
    checkpoint: u32,
}

/// Creates `dir` and records the invocation that fills it.
pub fn prepare_out_dir(dir: &Path, cli: &Cli) -> CmdResult {
    fs::create_dir_all(dir).ctx(format!("creating {}", dir.display()))?;
    let config = RunConfig {
        tool: "deepsep",
        version: env!("CARGO_PKG_VERSION"),
        formats: Formats {
            segments: "ESG1",
            weights: "DSW1",
            checkpoint: deepsep::trainer::CHECKPOINT_FORMAT,
        },
        cli,
    };
    let text = serde_json::to_string_pretty(&config).ctx("serializing run configuration")? + "\n";
    let path = dir.join(RUN_CONFIG);
    fs::write(&path, text).ctx(format!("writing {}", path.display()))
}

/// Segment file plus its manifest, if any.
pub struct Loaded {
    pub file: SegmentFile,
    pub manifest: Option<Manifest>,
}

impl Loaded {
    pub fn fs(&self) -> f64 {
        self.manifest
            .as_ref()
            .map(|m| m.sampling_rate)
            .unwrap_or(DEFAULT_FS)
    }

    pub fn kind(&self) -> Option<SegmentKind> {
        self.manifest
            .as_ref()
            .and_then(|m| SegmentKind::parse(&m.content))
    }

    pub fn channels(&self) -> Option<usize> {
        self.manifest.as_ref().and_then(|m| m.channels)
    }
}

pub fn load(path: &Path) -> CmdResult<Loaded> {
    let file = load_segments(path).ctx(format!("reading {}", path.display()))?;
    let manifest =
        Manifest::load_beside(path).ctx(format!("reading manifest of {}", path.display()))?;
    if let Some(m) = &manifest {
        if m.count != file.len() || (m.count > 0 && m.segment_length != file.segment_len) {
            return Err(Failure::from(anyhow::anyhow!(
                "{}: manifest describes {} segments of {} samples, file holds {} of {}",
                path.display(),
                m.count,
                m.segment_length,
                file.len(),
                file.segment_len
            )));
        }
        if let Some(c) = m.channels {
            if c == 0 || file.len() % c != 0 {
                return Err(Failure::from(anyhow::anyhow!(
                    "{}: {} segments do not split into {} channels",
                    path.display(),
                    file.len(),
                    c
                )));
            }
        }
    }
    Ok(Loaded { file, manifest })
}

pub fn save(path: &Path, file: &SegmentFile, manifest: &Manifest) -> CmdResult {
    save_segments(path, file).ctx(format!("writing {}", path.display()))?;
    manifest
        .save(Manifest::path_for(path))
        .ctx(format!("writing manifest of {}", path.display()))
}

pub fn pool(loaded: Loaded, kind: SegmentKind) -> Vec<Segment> {
    pool_from(loaded.file.segments, kind)
}

/// A directory written by `synth`.
pub struct SynthSet {
    pub fs: f64,
    pub samples: Vec<MixedSample>,
    pub clean: Vec<Segment>,
    pub artifacts: Vec<Segment>,
}

pub fn load_synth(dir: &Path) -> CmdResult<SynthSet> {
    let mixed = load(&dir.join(MIXED))?;
    let clean = load(&dir.join(CLEAN))?;
    let artifact = load(&dir.join(ARTIFACT))?;
    let fs = mixed.fs();
    let meta = mixed
        .manifest
        .as_ref()
        .map(|m| m.samples.clone())
        .ok_or_else(|| {
            Failure::from(anyhow::anyhow!(
                "{}: mixed.json manifest is missing",
                dir.display()
            ))
        })?;
    let n = mixed.file.len();
    if meta.len() != n || clean.file.len() != n || artifact.file.len() != n {
        return Err(Failure::from(anyhow::anyhow!(
            "{}: mixed ({n}), clean ({}), artifact ({}) and manifest ({}) counts disagree",
            dir.display(),
            clean.file.len(),
            artifact.file.len(),
            meta.len()
        )));
    }
    let kind = artifact.kind().unwrap_or(SegmentKind::Eog);
    let samples = mixed
        .file
        .segments
        .iter()
        .zip(&clean.file.segments)
        .zip(&artifact.file.segments)
        .zip(&meta)
        .map(|(((y, x), a), m)| MixedSample {
            y: y.clone(),
            x: x.clone(),
            // The stored artifact is already scaled; keep it as the unit waveform.
            n: a.clone(),
            lambda: 1.0,
            snr_db: m.snr_db,
            artifact: m.artifact,
            eeg_index: m.eeg_index,
            artifact_index: m.artifact_index,
        })
        .collect();
    Ok(SynthSet {
        fs,
        samples,
        clean: pool(clean, SegmentKind::CleanEeg),
        artifacts: pool(artifact, kind),
    })
}
