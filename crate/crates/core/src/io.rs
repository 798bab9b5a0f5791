//! On-disk recording format.
//!
//! A recording is a directory holding `meta.json` and `data.f32`. The binary
//! file is the channels × samples matrix in row-major order (all samples of
//! channel 0 first), each value a little-endian IEEE-754 binary32.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linmodel::{Marker, MultichannelRecording};

pub const META_FILE: &str = "meta.json";
pub const DATA_FILE: &str = "data.f32";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingMeta {
    pub format_version: u32,
    pub channel_labels: Vec<String>,
    pub sample_rate: f64,
    pub markers: Vec<Marker>,
    pub dtype: String,
    pub byte_order: String,
    /// `[channels, samples]`.
    pub shape: [usize; 2],
    #[serde(default)]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

pub fn write_recording(rec: &MultichannelRecording, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let (c, t) = rec.data().shape();
    let mut bytes = Vec::with_capacity(c * t * 4);
    for i in 0..c {
        for j in 0..t {
            bytes.extend_from_slice(&(rec.data()[(i, j)] as f32).to_le_bytes());
        }
    }
    fs::write(dir.join(DATA_FILE), bytes)?;
    let meta = RecordingMeta {
        format_version: FORMAT_VERSION,
        channel_labels: rec.channel_labels().to_vec(),
        sample_rate: rec.sample_rate(),
        markers: rec.markers().to_vec(),
        dtype: "float32".into(),
        byte_order: "little".into(),
        shape: [c, t],
        metadata: rec.metadata().clone(),
    };
    fs::write(dir.join(META_FILE), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

pub fn read_recording(dir: &Path) -> Result<MultichannelRecording> {
    let meta: RecordingMeta = serde_json::from_str(&fs::read_to_string(dir.join(META_FILE))?)?;
    if meta.dtype != "float32" || meta.byte_order != "little" {
        return Err(Error::Format(format!(
            "unsupported sample encoding {} / {}",
            meta.dtype, meta.byte_order
        )));
    }
    let [c, t] = meta.shape;
    let bytes = fs::read(dir.join(DATA_FILE))?;
    if bytes.len() != c * t * 4 {
        return Err(Error::Format(format!(
            "{} holds {} bytes, shape {c}x{t} needs {}",
            DATA_FILE,
            bytes.len(),
            c * t * 4
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    let data = DMatrix::from_row_slice(c, t, &values);
    Ok(MultichannelRecording::new(data, meta.sample_rate, meta.channel_labels, meta.markers)?
        .with_metadata(meta.metadata))
}

/// Rounds every sample to binary32, the precision kept on disk.
pub fn quantize(rec: &MultichannelRecording) -> MultichannelRecording {
    let data = rec.data().map(|v| v as f32 as f64);
    rec.with_data(data).expect("shape unchanged")
}
