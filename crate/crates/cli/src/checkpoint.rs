//! Checkpoint container: `JMFC` magic, u32 version, u32 header length, a JSON
//! header (spec + buffer table), then raw little-endian buffers.

use std::path::Path;

use half::f16;
use serde::{Deserialize, Serialize};

use jmfusion_core::fusion::{FusionSpec, ModelBlob, ParamBlob, Storage};
use jmfusion_core::nn::Precision;

use crate::dataset::write_atomic;
use crate::error::{CliError, Result};

const MAGIC: &[u8; 4] = b"JMFC";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct BufferEntry {
    name: String,
    shape: Vec<usize>,
    precision: Precision,
    offset: usize,
    len: usize,
    trainable: bool,
}

#[derive(Serialize, Deserialize)]
struct Header {
    spec: FusionSpec,
    precision: Precision,
    buffers: Vec<BufferEntry>,
}

pub fn encode(blob: &ModelBlob) -> Vec<u8> {
    let mut payload = Vec::with_capacity(blob.payload_bytes());
    let mut buffers = Vec::with_capacity(blob.params.len());
    for p in &blob.params {
        let offset = payload.len();
        let precision = match &p.data {
            Storage::F32(v) => {
                v.iter().for_each(|x| payload.extend_from_slice(&x.to_le_bytes()));
                Precision::F32
            }
            Storage::F16(v) => {
                v.iter().for_each(|x| payload.extend_from_slice(&x.to_bits().to_le_bytes()));
                Precision::F16
            }
        };
        buffers.push(BufferEntry {
            name: p.name.clone(),
            shape: p.shape.clone(),
            precision,
            offset,
            len: payload.len() - offset,
            trainable: p.trainable,
        });
    }
    let header = serde_json::to_vec(&Header { spec: blob.spec.clone(), precision: blob.precision, buffers })
        .expect("header serializes");
    let mut out = Vec::with_capacity(12 + header.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<ModelBlob> {
    let bad = |m: &str| CliError::format(path, m);
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(bad(&format!("unsupported checkpoint version {version}")));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let header_end = 12usize.checked_add(hlen).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(&bytes[12..header_end]).map_err(|e| CliError::format(path, e))?;
    let payload = &bytes[header_end..];
    let mut params = Vec::with_capacity(header.buffers.len());
    for b in header.buffers {
        let raw = payload.get(b.offset..b.offset + b.len).ok_or_else(|| bad(&format!("buffer {} out of range", b.name)))?;
        let n: usize = b.shape.iter().product();
        if raw.len() != n * b.precision.bytes() {
            return Err(bad(&format!("buffer {} has {} bytes for shape {:?}", b.name, raw.len(), b.shape)));
        }
        let data = match b.precision {
            Precision::F32 => Storage::F32(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4"))).collect()),
            Precision::F16 => Storage::F16(
                raw.chunks_exact(2).map(|c| f16::from_bits(u16::from_le_bytes(c.try_into().expect("2")))).collect(),
            ),
        };
        params.push(ParamBlob { name: b.name, shape: b.shape, trainable: b.trainable, data });
    }
    Ok(ModelBlob { spec: header.spec, precision: header.precision, params })
}

pub fn save(path: &Path, blob: &ModelBlob) -> Result<()> {
    write_atomic(path, &encode(blob))
}

pub fn load(path: &Path) -> Result<ModelBlob> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode(&bytes, path)
}
