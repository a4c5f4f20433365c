//! Forecast error metrics and per-cell error maps.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, FormatError, Result};
use crate::numerics::Tensor;

/// Default MAPE mask: targets with `|y| ≤ 1e-6` are excluded.
pub const DEFAULT_MAPE_THRESHOLD: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rmse: f64,
    pub mae: f64,
    /// Percent; `None` when every target is masked.
    pub mape: Option<f64>,
    pub n_evaluated: usize,
    pub n_masked: usize,
}

impl std::fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "RMSE {:.4}  MAE {:.4}  MAPE ", self.rmse, self.mae)?;
        match self.mape {
            Some(m) => write!(f, "{m:.2}%")?,
            None => write!(f, "undefined")?,
        }
        write!(f, "  (evaluated {}, masked {})", self.n_evaluated, self.n_masked)
    }
}

/// RMSE and MAE over all elements; MAPE over elements with `|y| > mask_threshold`.
/// Sums run left to right in f64.
pub fn compute_metrics(pred: &Tensor<f32>, actual: &Tensor<f32>, mask_threshold: f64) -> Result<MetricsReport> {
    if pred.shape() != actual.shape() {
        return Err(Error::shape("compute_metrics", pred.shape(), actual.shape()));
    }
    let n = pred.numel();
    let (mut sq, mut abs, mut pct) = (0.0f64, 0.0f64, 0.0f64);
    let mut evaluated = 0usize;
    for (&p, &y) in pred.data().iter().zip(actual.data()) {
        let (p, y) = (p as f64, y as f64);
        let e = p - y;
        sq += e * e;
        abs += e.abs();
        if y.abs() > mask_threshold {
            pct += (e / y).abs();
            evaluated += 1;
        }
    }
    Ok(MetricsReport {
        rmse: (sq / n as f64).sqrt(),
        mae: abs / n as f64,
        mape: (evaluated > 0).then(|| 100.0 * pct / evaluated as f64),
        n_evaluated: evaluated,
        n_masked: n - evaluated,
    })
}

/// `Σ_c |ŷ − y|` per cell for `(C, H, W)` inputs, giving `(H, W)`.
pub fn error_map(pred: &Tensor<f32>, actual: &Tensor<f32>) -> Result<Tensor<f64>> {
    if pred.shape() != actual.shape() || pred.rank() != 3 {
        return Err(Error::shape("error_map", pred.shape(), actual.shape()));
    }
    let (c, h, w) = (pred.dim(0), pred.dim(1), pred.dim(2));
    let mut out = vec![0.0f64; h * w];
    for ch in 0..c {
        for (i, o) in out.iter_mut().enumerate() {
            let k = ch * h * w + i;
            *o += (pred.data()[k] as f64 - actual.data()[k] as f64).abs();
        }
    }
    Tensor::new(vec![h, w], out)
}

/// One line per grid row, comma-separated.
pub fn error_map_csv(map: &Tensor<f64>) -> String {
    let w = map.dim(1);
    let mut s = String::new();
    for row in map.data().chunks(w) {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        let _ = writeln!(s, "{}", line.join(","));
    }
    s
}

/// Binary 8-bit graymap with the largest value at 255 (all black if the map is zero).
pub fn error_map_pgm(map: &Tensor<f64>) -> Vec<u8> {
    let (h, w) = (map.dim(0), map.dim(1));
    let max = map.data().iter().copied().fold(0.0f64, f64::max);
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(map.data().iter().map(|&v| {
        if max > 0.0 {
            (v / max * 255.0).round().clamp(0.0, 255.0) as u8
        } else {
            0
        }
    }));
    out
}

/// Parses a graymap written by [`error_map_pgm`]: `(width, height, pixels)`.
pub fn parse_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let bad = |m: &str| Error::Format(FormatError::Metadata(format!("pgm: {m}")));
    if !bytes.starts_with(b"P5") {
        return Err(FormatError::BadMagic { expected: "P5" }.into());
    }
    let mut fields = Vec::new();
    let mut pos = 2;
    while fields.len() < 3 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        let text = std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header"))?;
        fields.push(text.parse::<usize>().map_err(|_| bad("header field"))?);
    }
    let (w, h) = (fields[0], fields[1]);
    let pixels = bytes.get(pos + 1..).ok_or_else(|| bad("missing raster"))?;
    if pixels.len() != w * h {
        return Err(bad(&format!("expected {} pixels, found {}", w * h, pixels.len())));
    }
    Ok((w, h, pixels.to_vec()))
}

/// Writes `<stem>.csv` and `<stem>.pgm` into `dir`; returns both paths.
pub fn write_error_map(map: &Tensor<f64>, dir: &Path, stem: &str) -> Result<[std::path::PathBuf; 2]> {
    let csv = dir.join(format!("{stem}.csv"));
    let pgm = dir.join(format!("{stem}.pgm"));
    fs::write(&csv, error_map_csv(map)).map_err(|e| Error::io(&csv, e))?;
    fs::write(&pgm, error_map_pgm(map)).map_err(|e| Error::io(&pgm, e))?;
    Ok([csv, pgm])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f32]) -> Tensor<f32> {
        Tensor::new(vec![v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn hand_cases() {
        let m = compute_metrics(&t(&[3.0]), &t(&[1.0]), DEFAULT_MAPE_THRESHOLD).unwrap();
        assert_eq!((m.rmse, m.mae, m.mape), (2.0, 2.0, Some(200.0)));
        let x = t(&[1.0, 2.0, 5.0]);
        let m = compute_metrics(&x, &x, DEFAULT_MAPE_THRESHOLD).unwrap();
        assert_eq!((m.rmse, m.mae, m.mape), (0.0, 0.0, Some(0.0)));
    }

    #[test]
    fn all_masked_is_undefined() {
        let m = compute_metrics(&t(&[1.0, 2.0]), &t(&[0.0, 0.0]), DEFAULT_MAPE_THRESHOLD).unwrap();
        assert_eq!(m.mape, None);
        assert_eq!((m.n_evaluated, m.n_masked), (0, 2));
        assert!(m.to_string().contains("undefined"));
    }

    #[test]
    fn single_cell_maps_to_255() {
        let mut pred = Tensor::zeros(vec![2, 3, 3]).unwrap();
        pred.set(&[1, 2, 0], 5.0);
        let map = error_map(&pred, &Tensor::zeros(vec![2, 3, 3]).unwrap()).unwrap();
        let (w, h, px) = parse_pgm(&error_map_pgm(&map)).unwrap();
        assert_eq!((w, h), (3, 3));
        assert_eq!(px.iter().filter(|&&p| p != 0).count(), 1);
        assert_eq!(px[6], 255);
    }

    #[test]
    fn identical_is_black() {
        let x = Tensor::from_fn(vec![2, 2, 4], |i| i as f32).unwrap();
        let map = error_map(&x, &x).unwrap();
        assert!(map.data().iter().all(|&v| v == 0.0));
        let (_, _, px) = parse_pgm(&error_map_pgm(&map)).unwrap();
        assert!(px.iter().all(|&p| p == 0));
        assert_eq!(error_map_csv(&map), "0,0,0,0\n0,0,0,0\n");
    }
}
