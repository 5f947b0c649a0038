//! DSW1 weight files.
//!
//! Little-endian layout:
//!
//! ```text
//! "DSW1"                       4 bytes
//! tensor count                 u32
//! per tensor:
//!   name length                u16
//!   name                       UTF-8
//!   ndim                       u8
//!   dims                       ndim × u32
//!   values                     prod(dims) × f32
//! ```
//!
//! Network tensors are named `encoder.block0.branch3.weight`,
//! `decomposer.proj.bias`, and so on (see [`NetworkParams::named_tensors`]).
//! Records under the `optim.` prefix carry optimizer state in checkpoints and
//! are skipped when loading a network.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use super::{ArchConfig, ModelError, NetworkParams};
use crate::autodiff::Tensor;

const MAGIC: &[u8; 4] = b"DSW1";

/// Prefix reserved for non-network records in the same file.
pub const OPTIM_PREFIX: &str = "optim.";

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: Vec<f32>,
}

impl Record {
    pub fn from_tensor(name: impl Into<String>, t: &Tensor) -> Self {
        Self {
            name: name.into(),
            dims: t.shape().to_vec(),
            values: t.data().iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn from_values(name: impl Into<String>, dims: Vec<usize>, values: &[f64]) -> Self {
        Self {
            name: name.into(),
            dims,
            values: values.iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| v as f64).collect()
    }
}

pub fn write_records<W: Write>(mut w: W, records: &[Record]) -> Result<(), ModelError> {
    w.write_all(MAGIC)?;
    w.write_all(&(records.len() as u32).to_le_bytes())?;
    for r in records {
        let name = r.name.as_bytes();
        let name_len = u16::try_from(name.len())
            .map_err(|_| ModelError::InvalidRecord(format!("name too long: {}", r.name)))?;
        let ndim = u8::try_from(r.dims.len())
            .map_err(|_| ModelError::InvalidRecord(format!("too many dims: {}", r.name)))?;
        if r.dims.iter().product::<usize>() != r.values.len() {
            return Err(ModelError::InvalidRecord(format!(
                "{}: dims/values disagree",
                r.name
            )));
        }
        w.write_all(&name_len.to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&[ndim])?;
        for &d in &r.dims {
            let d = u32::try_from(d)
                .map_err(|_| ModelError::InvalidRecord(format!("dim too large: {}", r.name)))?;
            w.write_all(&d.to_le_bytes())?;
        }
        for &v in &r.values {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &'static str) -> Result<(), ModelError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        ErrorKind::UnexpectedEof => ModelError::Truncated(what),
        _ => ModelError::Io(e),
    })
}

fn read_u32<R: Read>(r: &mut R, what: &'static str) -> Result<u32, ModelError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_records<R: Read>(mut r: R) -> Result<Vec<Record>, ModelError> {
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(ModelError::BadMagic(magic));
    }
    let count = read_u32(&mut r, "tensor count")?;
    let mut records = Vec::new();
    for _ in 0..count {
        let mut b2 = [0u8; 2];
        read_exact(&mut r, &mut b2, "name length")?;
        let mut name = vec![0u8; u16::from_le_bytes(b2) as usize];
        read_exact(&mut r, &mut name, "name")?;
        let name = String::from_utf8(name)
            .map_err(|_| ModelError::InvalidRecord("name is not UTF-8".into()))?;
        let mut nd = [0u8; 1];
        read_exact(&mut r, &mut nd, "ndim")?;
        let mut dims = Vec::with_capacity(nd[0] as usize);
        for _ in 0..nd[0] {
            dims.push(read_u32(&mut r, "dims")? as usize);
        }
        let n: usize = dims.iter().product();
        let mut raw = vec![0u8; n * 4];
        read_exact(&mut r, &mut raw, "values")?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        records.push(Record { name, dims, values });
    }
    Ok(records)
}

fn block_count(names: &BTreeSet<&str>, stage: &str) -> usize {
    let prefix = format!("{stage}.block");
    names
        .iter()
        .filter_map(|n| n.strip_prefix(&prefix))
        .filter_map(|rest| rest.split('.').next()?.parse::<usize>().ok())
        .map(|i| i + 1)
        .max()
        .unwrap_or(0)
}

impl NetworkParams {
    pub fn to_records(&self) -> Vec<Record> {
        self.named_tensors()
            .into_iter()
            .map(|(name, t)| Record::from_tensor(name, t))
            .collect()
    }

    /// Infers the architecture from record names and shapes, then checks that
    /// every expected tensor is present with the expected shape.
    pub fn from_records(records: &[Record]) -> Result<Self, ModelError> {
        let by_name: HashMap<&str, &Record> = records
            .iter()
            .filter(|r| !r.name.starts_with(OPTIM_PREFIX))
            .map(|r| (r.name.as_str(), r))
            .collect();
        let names: BTreeSet<&str> = by_name.keys().copied().collect();
        let first = "encoder.block0.branch0.weight";
        let c_branch = by_name
            .get(first)
            .ok_or_else(|| ModelError::MissingTensor(first.to_string()))?
            .dims
            .first()
            .copied()
            .unwrap_or(0);
        let arch = ArchConfig {
            c_branch,
            encoder_blocks: block_count(&names, "encoder"),
            decomposer_blocks: block_count(&names, "decomposer"),
            decoder_blocks: block_count(&names, "decoder"),
        };
        Self::from_records_with_arch(records, arch)
    }

    /// Fills a network of the given architecture from records.
    pub fn from_records_with_arch(
        records: &[Record],
        arch: ArchConfig,
    ) -> Result<Self, ModelError> {
        let mut params = Self::zeros(arch)?;
        let mut by_name: HashMap<&str, &Record> = records
            .iter()
            .filter(|r| !r.name.starts_with(OPTIM_PREFIX))
            .map(|r| (r.name.as_str(), r))
            .collect();
        let names: Vec<String> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
        for (name, t) in names.iter().zip(params.tensors_mut()) {
            let rec = by_name
                .remove(name.as_str())
                .ok_or_else(|| ModelError::MissingTensor(name.clone()))?;
            if rec.dims != t.shape() {
                return Err(ModelError::ShapeMismatch {
                    name: name.clone(),
                    expected: t.shape().to_vec(),
                    got: rec.dims.clone(),
                });
            }
            for (dst, &src) in t.data_mut().iter_mut().zip(&rec.values) {
                *dst = src as f64;
            }
        }
        if let Some(extra) = by_name.keys().min() {
            return Err(ModelError::UnexpectedTensor(extra.to_string()));
        }
        Ok(params)
    }
}

pub fn save_weights(params: &NetworkParams, path: impl AsRef<Path>) -> Result<(), ModelError> {
    let f = BufWriter::new(File::create(path)?);
    write_records(f, &params.to_records())
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<NetworkParams, ModelError> {
    let f = BufReader::new(File::open(path)?);
    NetworkParams::from_records(&read_records(f)?)
}
