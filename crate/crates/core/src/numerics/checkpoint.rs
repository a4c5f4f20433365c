//! Parameter checkpoints.
//!
//! Layout (all integers little-endian u32):
//! `"DDCNCKPT"`, version, count, then per parameter the name length, UTF-8
//! name, rank, each dimension, and the row-major f32 payload.

use std::fs;
use std::path::Path;

use super::bytes::{checked_count, put_f32s, put_u32, ByteReader};
use super::{ParamSet, Scalar, Tensor};
use crate::error::{Error, FormatError, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DDCNCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub value: Tensor<f32>,
}

pub fn encode_checkpoint<T: Scalar>(params: &ParamSet<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION);
    put_u32(&mut out, params.len() as u32);
    for p in params.iter() {
        put_u32(&mut out, p.name.len() as u32);
        out.extend_from_slice(p.name.as_bytes());
        put_u32(&mut out, p.value.rank() as u32);
        for &d in p.value.shape() {
            put_u32(&mut out, d as u32);
        }
        put_f32s(&mut out, p.value.data().iter().map(|v| v.as_f64() as f32));
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Vec<CheckpointEntry>> {
    let mut r = ByteReader::new(bytes);
    if r.take(8).ok() != Some(&CHECKPOINT_MAGIC[..]) {
        return Err(FormatError::BadMagic {
            expected: "DDCNCKPT",
        }
        .into());
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(FormatError::UnsupportedVersion(version).into());
    }
    let count = r.u32()? as usize;
    let mut entries = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|e| FormatError::Metadata(format!("parameter name is not UTF-8: {e}")))?
            .to_owned();
        let rank = r.u32()? as usize;
        // each dimension takes four bytes; guards against absurd ranks
        if rank.saturating_mul(4) > r.remaining() {
            return Err(FormatError::Truncated {
                needed: rank as u64 * 4,
                available: r.remaining() as u64,
            }
            .into());
        }
        let dims: Vec<u32> = (0..rank).map(|_| r.u32()).collect::<Result<_, _>>()?;
        let n = checked_count(&dims)?;
        let data = r.f32_vec(n)?;
        let value = Tensor::new(dims.iter().map(|&d| d as usize).collect::<Vec<_>>(), data)
            .map_err(|e| FormatError::Metadata(format!("parameter `{name}`: {e}")))?;
        entries.push(CheckpointEntry { name, value });
    }
    Ok(entries)
}

pub fn save_checkpoint<T: Scalar>(params: &ParamSet<T>, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(params)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Vec<CheckpointEntry>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

/// Overwrites `params` from checkpoint entries; names and shapes must match exactly.
pub fn apply_checkpoint<T: Scalar>(params: &mut ParamSet<T>, entries: &[CheckpointEntry]) -> Result<()> {
    if entries.len() != params.len() {
        return Err(FormatError::CheckpointMismatch(format!(
            "checkpoint has {} parameters, model has {}",
            entries.len(),
            params.len()
        ))
        .into());
    }
    for e in entries {
        let p = params.by_name_mut(&e.name).ok_or_else(|| {
            FormatError::CheckpointMismatch(format!("unknown parameter `{}`", e.name))
        })?;
        if p.value.shape() != e.value.shape() {
            return Err(FormatError::CheckpointMismatch(format!(
                "`{}` has shape {:?}, model expects {:?}",
                e.name,
                e.value.shape(),
                p.value.shape()
            ))
            .into());
        }
        p.value = e.value.cast();
    }
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(params: &mut ParamSet<T>, path: &Path) -> Result<()> {
    let entries = read_checkpoint(path)?;
    apply_checkpoint(params, &entries)
}
