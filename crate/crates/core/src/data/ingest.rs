//! Conversion of external array dumps into [`TrafficDataset`].
//!
//! Supported inputs:
//! * `.npy` version 1/2 arrays of little-endian `f4` or `f8`, C order, rank 4;
//! * headerless little-endian f32 files whose dimensions are supplied by the caller.
//!
//! Public grid-flow dumps are commonly stored as `(T, H, W, C)`; the axis
//! order is given by [`Layout`].

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dataset::TrafficDataset;
use crate::error::{Error, FormatError, Result};
use crate::numerics::bytes::{checked_count, ByteReader};
use crate::numerics::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    /// `(T, C, H, W)`, the native order.
    Tchw,
    /// `(T, H, W, C)`, channels last.
    Thwc,
}

impl std::str::FromStr for Layout {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "tchw" => Ok(Layout::Tchw),
            "thwc" => Ok(Layout::Thwc),
            other => Err(format!("unknown layout `{other}` (expected tchw or thwc)")),
        }
    }
}

struct NpyHeader {
    descr: String,
    fortran: bool,
    shape: Vec<usize>,
}

fn header_value<'a>(header: &'a str, key: &str) -> Option<&'a str> {
    let start = header.find(&format!("'{key}'"))? + key.len() + 2;
    let rest = header[start..].trim_start().strip_prefix(':')?.trim_start();
    Some(rest)
}

fn parse_npy_header(text: &str) -> Result<NpyHeader, FormatError> {
    let bad = |m: &str| FormatError::Metadata(format!("npy header: {m}"));
    let descr = header_value(text, "descr")
        .and_then(|r| r.strip_prefix('\''))
        .and_then(|r| r.split('\'').next())
        .ok_or_else(|| bad("missing descr"))?
        .to_string();
    let fortran = header_value(text, "fortran_order")
        .map(|r| r.starts_with("True"))
        .ok_or_else(|| bad("missing fortran_order"))?;
    let shape_text = header_value(text, "shape")
        .and_then(|r| r.strip_prefix('('))
        .and_then(|r| r.split(')').next())
        .ok_or_else(|| bad("missing shape"))?;
    let shape = shape_text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<usize>().map_err(|_| bad(&format!("bad dimension `{s}`"))))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(NpyHeader { descr, fortran, shape })
}

/// Decodes a rank-4 `.npy` image into a `(T, C, H, W)` tensor.
pub fn decode_npy(bytes: &[u8], layout: Layout) -> Result<Tensor<f32>> {
    let mut r = ByteReader::new(bytes);
    if r.take(6).ok() != Some(&b"\x93NUMPY"[..]) {
        return Err(FormatError::BadMagic { expected: "\\x93NUMPY" }.into());
    }
    let version = r.take(2)?[0];
    let header_len = match version {
        1 => {
            let b = r.take(2)?;
            u16::from_le_bytes([b[0], b[1]]) as usize
        }
        2 | 3 => r.u32()? as usize,
        v => return Err(FormatError::UnsupportedVersion(v as u32).into()),
    };
    let text = std::str::from_utf8(r.take(header_len)?)
        .map_err(|e| FormatError::Metadata(format!("npy header is not text: {e}")))?;
    let h = parse_npy_header(text)?;
    if h.fortran {
        return Err(FormatError::Metadata("Fortran-ordered arrays are not supported".into()).into());
    }
    if h.shape.len() != 4 {
        return Err(Error::InvalidShape(format!("expected a rank-4 array, got shape {:?}", h.shape)));
    }
    let dims: Vec<u32> = h
        .shape
        .iter()
        .map(|&d| u32::try_from(d).map_err(|_| FormatError::DimensionOverflow(format!("{d}"))))
        .collect::<Result<_, _>>()?;
    let count = checked_count(&dims)?;
    let data: Vec<f32> = match h.descr.as_str() {
        "<f4" => r.f32_vec(count)?,
        "<f8" => {
            let bytes = count
                .checked_mul(8)
                .ok_or_else(|| FormatError::DimensionOverflow(format!("{count} elements")))?;
            r.take(bytes)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")) as f32)
                .collect()
        }
        other => {
            return Err(FormatError::Metadata(format!("unsupported dtype `{other}` (need <f4 or <f8)")).into())
        }
    };
    to_tchw(Tensor::new(h.shape, data)?, layout)
}

fn to_tchw(t: Tensor<f32>, layout: Layout) -> Result<Tensor<f32>> {
    match layout {
        Layout::Tchw => Ok(t),
        Layout::Thwc => t.permute(&[0, 3, 1, 2]),
    }
}

/// Decodes a headerless little-endian f32 payload with the given dimensions (in `layout` order).
pub fn decode_raw_f32(bytes: &[u8], dims: [usize; 4], layout: Layout) -> Result<Tensor<f32>> {
    let d32: Vec<u32> = dims
        .iter()
        .map(|&d| u32::try_from(d).map_err(|_| FormatError::DimensionOverflow(format!("{d}"))))
        .collect::<Result<_, _>>()?;
    let count = checked_count(&d32)?;
    let mut r = ByteReader::new(bytes);
    let data = r.f32_vec(count)?;
    if r.remaining() != 0 {
        return Err(FormatError::Metadata(format!(
            "{} bytes beyond the declared {dims:?} payload",
            r.remaining()
        ))
        .into());
    }
    to_tchw(Tensor::new(dims.to_vec(), data)?, layout)
}

/// Reads `.npy` (by extension) or raw f32 (requires `dims`) into a dataset.
pub fn ingest(
    path: &Path,
    layout: Layout,
    dims: Option<[usize; 4]>,
    name: &str,
    interval_minutes: u32,
) -> Result<TrafficDataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let frames = if path.extension().is_some_and(|e| e == "npy") {
        decode_npy(&bytes, layout)?
    } else {
        let dims = dims.ok_or_else(|| {
            Error::InvalidConfig("raw input needs explicit dimensions (steps, ·, ·, ·)".into())
        })?;
        decode_raw_f32(&bytes, dims, layout)?
    };
    // tiny negative values from upstream float noise are clipped to zero
    let frames = frames.map(|v| if v < 0.0 && v > -1e-6 { 0.0 } else { v });
    TrafficDataset::new(name, interval_minutes, frames)
}
