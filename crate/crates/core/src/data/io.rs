//! Native dataset files.
//!
//! Layout (little-endian): `"GRDT"`, version u32 = 1, then u32 `steps`, `C`,
//! `H`, `W`, `interval_minutes`, the `(t, c, h, w)` row-major f32 payload, and
//! optionally a u32 length followed by that many bytes of UTF-8 JSON metadata.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dataset::TrafficDataset;
use crate::error::{Error, FormatError, Result};
use crate::numerics::bytes::{checked_count, put_f32s, put_u32, ByteReader};
use crate::numerics::Tensor;

pub const DATASET_MAGIC: &[u8; 4] = b"GRDT";
pub const DATASET_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Trailer {
    name: String,
}

pub fn encode_dataset(ds: &TrafficDataset) -> Vec<u8> {
    let m = &ds.meta;
    let mut out = Vec::with_capacity(28 + ds.frames.numel() * 4);
    out.extend_from_slice(DATASET_MAGIC);
    put_u32(&mut out, DATASET_VERSION);
    for v in [m.steps, m.channels, m.height, m.width] {
        put_u32(&mut out, v as u32);
    }
    put_u32(&mut out, m.interval_minutes);
    put_f32s(&mut out, ds.frames.data().iter().copied());
    let json = serde_json::to_vec(&Trailer { name: m.name.clone() }).expect("trailer serializes");
    put_u32(&mut out, json.len() as u32);
    out.extend_from_slice(&json);
    out
}

pub fn decode_dataset(bytes: &[u8]) -> Result<TrafficDataset> {
    let mut r = ByteReader::new(bytes);
    if r.take(4).ok() != Some(&DATASET_MAGIC[..]) {
        return Err(FormatError::BadMagic { expected: "GRDT" }.into());
    }
    let version = r.u32()?;
    if version != DATASET_VERSION {
        return Err(FormatError::UnsupportedVersion(version).into());
    }
    let dims = [r.u32()?, r.u32()?, r.u32()?, r.u32()?];
    let interval = r.u32()?;
    if dims.contains(&0) {
        return Err(FormatError::Metadata(format!("zero dimension in header {dims:?}")).into());
    }
    let count = checked_count(&dims)?;
    let data = r.f32_vec(count)?;
    let name = match r.remaining() {
        0 => String::new(),
        _ => {
            let len = r.u32()? as usize;
            let raw = r.take(len)?;
            let t: Trailer = serde_json::from_slice(raw)
                .map_err(|e| FormatError::Metadata(format!("trailing metadata: {e}")))?;
            t.name
        }
    };
    if r.remaining() != 0 {
        return Err(FormatError::Metadata(format!("{} unexpected trailing bytes", r.remaining())).into());
    }
    let shape: Vec<usize> = dims.iter().map(|&d| d as usize).collect();
    TrafficDataset::new(name, interval, Tensor::new(shape, data)?)
}

pub fn save_dataset(ds: &TrafficDataset, path: &Path) -> Result<()> {
    fs::write(path, encode_dataset(ds)).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: &Path) -> Result<TrafficDataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_dataset(&bytes)
}
