//! ESG1 segment files and their JSON manifests.
//!
//! Little-endian layout:
//!
//! ```text
//! "ESG1"            4 bytes
//! segment count     u32
//! segment length    u32
//! samples           count × length × f32, segment after segment
//! ```
//!
//! Multi-channel data reuses the layout channel-major (all segments of
//! channel 0, then channel 1, ...) and records the channel count in the
//! manifest.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DataError, SegmentKind};

const MAGIC: &[u8; 4] = b"ESG1";
const HEADER: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentFile {
    pub segment_len: usize,
    pub segments: Vec<Vec<f64>>,
}

impl SegmentFile {
    pub fn new(segment_len: usize, segments: Vec<Vec<f64>>) -> Result<Self, DataError> {
        for (index, s) in segments.iter().enumerate() {
            if s.len() != segment_len {
                return Err(DataError::RaggedSegments {
                    index,
                    expected: segment_len,
                    got: s.len(),
                });
            }
        }
        Ok(Self {
            segment_len,
            segments,
        })
    }

    /// Uses the length of the first segment (0 when empty).
    pub fn from_segments(segments: Vec<Vec<f64>>) -> Result<Self, DataError> {
        let len = segments.first().map_or(0, Vec::len);
        Self::new(len, segments)
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }
}

pub fn write_segments<W: Write>(mut w: W, file: &SegmentFile) -> Result<(), DataError> {
    let mut buf = Vec::with_capacity(HEADER + 4 * file.len() * file.segment_len);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(file.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(file.segment_len as u32).to_le_bytes());
    for (index, s) in file.segments.iter().enumerate() {
        if s.len() != file.segment_len {
            return Err(DataError::RaggedSegments {
                index,
                expected: file.segment_len,
                got: s.len(),
            });
        }
        for &v in s {
            if !v.is_finite() {
                return Err(DataError::NonFinite(index));
            }
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

/// Parses a whole ESG1 stream; any size disagreement with the header is an
/// error and nothing is returned.
pub fn read_segments<R: Read>(mut r: R) -> Result<SegmentFile, DataError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < 4 {
        return Err(DataError::ShortHeader);
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if &magic != MAGIC {
        return Err(DataError::BadMagic(magic));
    }
    if bytes.len() < HEADER {
        return Err(DataError::ShortHeader);
    }
    let count = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let expected = count * len * 4;
    let found = bytes.len() - HEADER;
    if found < expected {
        return Err(DataError::Truncated { expected, found });
    }
    if found > expected {
        return Err(DataError::TrailingBytes(found - expected));
    }
    let values: Vec<f64> = bytes[HEADER..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let segments = if len == 0 {
        vec![Vec::new(); count]
    } else {
        values.chunks_exact(len).map(<[f64]>::to_vec).collect()
    };
    Ok(SegmentFile {
        segment_len: len,
        segments,
    })
}

pub fn save_segments(path: impl AsRef<Path>, file: &SegmentFile) -> Result<(), DataError> {
    let mut buf = Vec::new();
    write_segments(&mut buf, file)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_segments(path: impl AsRef<Path>) -> Result<SegmentFile, DataError> {
    read_segments(fs::File::open(path)?)
}

/// Per-sample mixing record of a synthesized set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub lambda: f64,
    pub snr_db: f64,
    pub artifact: SegmentKind,
    pub eeg_index: usize,
    pub artifact_index: usize,
}

/// JSON companion of a segment file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    /// What the segments hold: "eeg", "eog", "emg", "mixed", ...
    pub content: String,
    pub sampling_rate: f64,
    pub segment_length: usize,
    pub count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channels: Option<usize>,
    #[serde(default)]
    pub provenance: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub samples: Vec<SampleMeta>,
}

impl Manifest {
    pub fn new(
        content: impl Into<String>,
        sampling_rate: f64,
        file: &SegmentFile,
        provenance: impl Into<String>,
    ) -> Self {
        Self {
            format: "ESG1".into(),
            content: content.into(),
            sampling_rate,
            segment_length: file.segment_len,
            count: file.len(),
            channels: None,
            provenance: provenance.into(),
            samples: Vec::new(),
        }
    }

    /// `data.esg` → `data.json`.
    pub fn path_for(segment_path: impl AsRef<Path>) -> PathBuf {
        segment_path.as_ref().with_extension("json")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DataError> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DataError> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    /// Loads the manifest next to a segment file, if there is one.
    pub fn load_beside(segment_path: impl AsRef<Path>) -> Result<Option<Self>, DataError> {
        let p = Self::path_for(segment_path);
        if p.exists() {
            Self::load(p).map(Some)
        } else {
            Ok(None)
        }
    }
}
