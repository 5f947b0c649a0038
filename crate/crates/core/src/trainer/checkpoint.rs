//! Checkpoints: a DSW1 file with the network plus `optim.m.*` / `optim.v.*`
//! moment records, and a JSON sidecar with the epoch, optimizer step and the
//! log so far.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{TrainConfig, TrainError, TrainLog, Trainer};
use crate::autodiff::{AdamConfig, AdamState};
use crate::model::{read_records, write_records, ArchConfig, NetworkParams, Record};

pub const CHECKPOINT_FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub epoch: usize,
    pub adam_step: u64,
    pub adam: AdamConfig,
    pub arch: ArchConfig,
    pub config: TrainConfig,
    pub log: TrainLog,
}

pub struct Checkpoint {
    pub params: NetworkParams,
    pub adam: AdamState,
    pub meta: CheckpointMeta,
}

fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes `checkpoint-epochNNNN.dsw` and its `.json` sidecar into `dir`.
pub fn save_checkpoint(dir: &Path, trainer: &Trainer) -> Result<PathBuf, TrainError> {
    fs::create_dir_all(dir)?;
    let epoch = trainer.completed_epochs();
    let path = dir.join(format!("checkpoint-epoch{epoch:04}.dsw"));
    let named = trainer.params.named_tensors();
    let mut records = trainer.params.to_records();
    let adam = trainer.adam();
    for (prefix, moments) in [
        ("optim.m.", adam.first_moments()),
        ("optim.v.", adam.second_moments()),
    ] {
        for ((name, t), values) in named.iter().zip(moments) {
            records.push(Record::from_values(
                format!("{prefix}{name}"),
                t.shape().to_vec(),
                values,
            ));
        }
    }
    write_records(BufWriter::new(File::create(&path)?), &records)?;
    let meta = CheckpointMeta {
        format_version: CHECKPOINT_FORMAT,
        epoch,
        adam_step: adam.step_count(),
        adam: adam.config,
        arch: trainer.params.arch,
        config: trainer.config,
        log: trainer.log().clone(),
    };
    fs::write(sidecar(&path), serde_json::to_string_pretty(&meta)? + "\n")?;
    Ok(path)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, TrainError> {
    let meta: CheckpointMeta = serde_json::from_str(&fs::read_to_string(sidecar(path))?)?;
    if meta.format_version != CHECKPOINT_FORMAT {
        return Err(TrainError::Checkpoint(format!(
            "unsupported checkpoint format {}",
            meta.format_version
        )));
    }
    let records = read_records(BufReader::new(File::open(path)?))?;
    let params = NetworkParams::from_records_with_arch(&records, meta.arch)?;
    let moments = |prefix: &str| -> Result<Vec<Vec<f64>>, TrainError> {
        params
            .named_tensors()
            .iter()
            .map(|(name, t)| {
                let key = format!("{prefix}{name}");
                let r = records.iter().find(|r| r.name == key).ok_or_else(|| {
                    TrainError::Checkpoint(format!("missing optimizer record {key}"))
                })?;
                if r.dims != t.shape() {
                    return Err(TrainError::Checkpoint(format!(
                        "optimizer record {key} has shape {:?}",
                        r.dims
                    )));
                }
                Ok(r.to_f64())
            })
            .collect()
    };
    let adam = AdamState::from_parts(
        meta.adam,
        meta.adam_step,
        moments("optim.m.")?,
        moments("optim.v.")?,
    )?;
    if meta.log.len() != meta.epoch {
        return Err(TrainError::Checkpoint(format!(
            "sidecar log has {} epochs, checkpoint claims {}",
            meta.log.len(),
            meta.epoch
        )));
    }
    Ok(Checkpoint { params, adam, meta })
}
