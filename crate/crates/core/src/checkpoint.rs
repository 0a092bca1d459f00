//! Model checkpoints.
//!
//! `checkpoint.bin` is a flat sequence of records, each
//!
//! ```text
//! u32 name length | name (UTF-8) | u32 rank | u64 dims[rank] | f64 values[prod(dims)]
//! ```
//!
//! with every integer and double little-endian. `checkpoint.json` holds the
//! model configuration and, per record, its name, shape and byte offset.
//! Parameters come first in model order, then normalization buffers.

use crate::error::{Error, Result};
use crate::models::{Model, ModelConfig};
use crate::nn::Module;
use crate::report::write_atomic;
use crate::rng::{stream, Stream};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const BINARY_FILE: &str = "checkpoint.bin";
pub const MANIFEST_FILE: &str = "checkpoint.json";
pub const FORMAT: &str = "cntlab-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset of the record header in the binary file.
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub model: ModelConfig,
    pub records: Vec<RecordEntry>,
}

pub fn encode_records(records: &[Record]) -> (Vec<u8>, Vec<RecordEntry>) {
    let mut bytes = Vec::new();
    let mut entries = Vec::with_capacity(records.len());
    for r in records {
        entries.push(RecordEntry {
            name: r.name.clone(),
            shape: r.shape.clone(),
            offset: bytes.len() as u64,
        });
        bytes.extend((r.name.len() as u32).to_le_bytes());
        bytes.extend(r.name.as_bytes());
        bytes.extend((r.shape.len() as u32).to_le_bytes());
        for &d in &r.shape {
            bytes.extend((d as u64).to_le_bytes());
        }
        for &v in &r.values {
            bytes.extend(v.to_le_bytes());
        }
    }
    (bytes, entries)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated record at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_records(bytes: &[u8]) -> Result<Vec<Record>> {
    let mut r = Reader { bytes, pos: 0 };
    let mut out = Vec::new();
    while r.pos < bytes.len() {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::Checkpoint("record name is not UTF-8".into()))?;
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let count = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let count = count.ok_or_else(|| Error::Checkpoint(format!("shape of `{name}` overflows")))?;
        let raw = r.take(count.checked_mul(8).ok_or_else(|| Error::Checkpoint("record too large".into()))?)?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        out.push(Record { name, shape, values });
    }
    Ok(out)
}

pub fn model_records(model: &Model<f64>) -> Vec<Record> {
    let mut records: Vec<Record> = model
        .parameters()
        .iter()
        .map(|p| Record {
            name: p.name().to_string(),
            shape: p.shape().to_vec(),
            values: p.values(),
        })
        .collect();
    records.extend(model.buffers().into_iter().map(|(name, values)| Record {
        shape: vec![values.len()],
        name,
        values,
    }));
    records
}

/// Writes `checkpoint.bin` and `checkpoint.json` into `dir`.
pub fn save(dir: &Path, model: &Model<f64>) -> Result<()> {
    let (bytes, records) = encode_records(&model_records(model));
    let manifest = Manifest {
        format: FORMAT.into(),
        version: VERSION,
        model: model.config().clone(),
        records,
    };
    write_atomic(&dir.join(BINARY_FILE), &bytes)?;
    let mut json = serde_json::to_vec_pretty(&manifest)?;
    json.push(b'\n');
    write_atomic(&dir.join(MANIFEST_FILE), &json)
}

/// Rebuilds the model described by the manifest in `dir` and loads its values.
/// Every parameter and buffer must be present with the recorded shape.
pub fn load(dir: &Path) -> Result<Model<f64>> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = std::fs::read(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_slice(&text)?;
    if manifest.format != FORMAT || manifest.version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint {} v{}",
            manifest.format, manifest.version
        )));
    }
    let bin_path = dir.join(BINARY_FILE);
    let bytes = std::fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
    let records = decode_records(&bytes)?;
    // weights are overwritten below; the draw only sizes the tensors
    let model = Model::new(manifest.model, &mut stream(0, Stream::Init))?;
    let find = |name: &str| records.iter().find(|r| r.name == name);
    for p in model.parameters() {
        let r = find(p.name()).ok_or_else(|| Error::Checkpoint(format!("missing parameter `{}`", p.name())))?;
        if r.shape != p.shape() {
            return Err(Error::Checkpoint(format!(
                "`{}` has shape {:?} in the checkpoint, {:?} in the model",
                p.name(),
                r.shape,
                p.shape()
            )));
        }
        p.set_values(&r.values);
    }
    for (name, values) in model.buffers() {
        let r = find(&name).ok_or_else(|| Error::Checkpoint(format!("missing buffer `{name}`")))?;
        if r.values.len() != values.len() {
            return Err(Error::Checkpoint(format!("buffer `{name}` has the wrong length")));
        }
        model.load_buffer(&name, &r.values)?;
    }
    Ok(model)
}
