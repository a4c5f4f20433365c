//! Bilinear interpolation with zero padding outside the grid.

use crate::error::{Error, Result};
use crate::numerics::{Backward, BackwardCtx, Scalar, Tape, Tensor, Var};

/// FLOPs charged per interpolated sample (4 multiplies, 4 adds).
pub const BILINEAR_FLOPS: u64 = 8;

/// The four lattice cells around a fractional position and their weights,
/// ordered (r0,q0), (r0,q0+1), (r0+1,q0), (r0+1,q0+1). Cells outside the grid
/// carry `None` and read as zero.
#[derive(Clone, Copy, Debug)]
pub struct Corners<T> {
    pub cells: [Option<usize>; 4],
    pub weights: [T; 4],
    /// Fractional parts of the row and column coordinates.
    pub frac: (T, T),
}

impl<T: Scalar> Corners<T> {
    pub fn locate(h: usize, w: usize, r: T, q: T) -> Self {
        let r0 = r.floor();
        let q0 = q.floor();
        let lr = r - r0;
        let lq = q - q0;
        let hr = T::one() - lr;
        let hq = T::one() - lq;
        let weights = [hr * hq, hr * lq, lr * hq, lr * lq];
        let (r0, q0) = (r0.as_f64(), q0.as_f64());
        let cell = |dr: f64, dq: f64| -> Option<usize> {
            let (rr, qq) = (r0 + dr, q0 + dq);
            // also rejects NaN
            if rr >= 0.0 && rr < h as f64 && qq >= 0.0 && qq < w as f64 {
                Some(rr as usize * w + qq as usize)
            } else {
                None
            }
        };
        Corners {
            cells: [cell(0.0, 0.0), cell(0.0, 1.0), cell(1.0, 0.0), cell(1.0, 1.0)],
            weights,
            frac: (lr, lq),
        }
    }

    #[inline]
    pub fn values(&self, plane: &[T]) -> [T; 4] {
        let fetch = |c: Option<usize>| c.map_or(T::zero(), |i| plane[i]);
        [
            fetch(self.cells[0]),
            fetch(self.cells[1]),
            fetch(self.cells[2]),
            fetch(self.cells[3]),
        ]
    }

    #[inline]
    pub fn sample(&self, plane: &[T]) -> T {
        let mut acc = T::zero();
        for (cell, &w) in self.cells.iter().zip(&self.weights) {
            if let Some(i) = cell {
                acc += w * plane[*i];
            }
        }
        acc
    }

    /// Partial derivatives of the sample with respect to the row and column coordinate.
    #[inline]
    pub fn position_grad(&self, plane: &[T]) -> (T, T) {
        let v = self.values(plane);
        let (lr, lq) = self.frac;
        let (hr, hq) = (T::one() - lr, T::one() - lq);
        (
            hq * (v[2] - v[0]) + lq * (v[3] - v[1]),
            hr * (v[1] - v[0]) + lr * (v[3] - v[2]),
        )
    }
}

/// Value of `x[n, c]` at the fractional position `(r, q)`.
pub fn bilinear_sample<T: Scalar>(x: &Tensor<T>, n: usize, c: usize, r: T, q: T) -> Result<T> {
    if x.rank() != 4 || n >= x.dim(0) || c >= x.dim(1) {
        return Err(Error::InvalidShape(format!(
            "bilinear_sample: index ({n}, {c}) invalid for {:?}",
            x.shape()
        )));
    }
    let (h, w) = (x.dim(2), x.dim(3));
    let plane = &x.data()[(n * x.dim(1) + c) * h * w..(n * x.dim(1) + c + 1) * h * w];
    Ok(Corners::locate(h, w, r, q).sample(plane))
}

struct SamplePointsBackward;

impl<T: Scalar> Backward<T> for SamplePointsBackward {
    fn name(&self) -> &'static str {
        "sample_points"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let x = ctx.inputs[0];
        let pts = ctx.inputs[1];
        let (batch, ch, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
        let np = pts.dim(1);
        let dy = ctx.grad.data();
        let mut dx = vec![T::zero(); x.numel()];
        let mut dp = vec![T::zero(); pts.numel()];
        for n in 0..batch {
            for p in 0..np {
                let base = (n * np + p) * 2;
                let corners = Corners::locate(h, w, pts.data()[base], pts.data()[base + 1]);
                for c in 0..ch {
                    let g = dy[(n * ch + c) * np + p];
                    let off = (n * ch + c) * h * w;
                    let plane = &x.data()[off..off + h * w];
                    for (cell, &wt) in corners.cells.iter().zip(&corners.weights) {
                        if let Some(i) = cell {
                            dx[off + i] += g * wt;
                        }
                    }
                    let (gr, gq) = corners.position_grad(plane);
                    dp[base] += g * gr;
                    dp[base + 1] += g * gq;
                }
            }
        }
        Ok(vec![
            Some(Tensor::from_parts(x.shape().to_vec(), dx)),
            Some(Tensor::from_parts(pts.shape().to_vec(), dp)),
        ])
    }
}

impl<T: Scalar> Tape<T> {
    /// Samples `x` of shape `(N,C,H,W)` at `points` of shape `(N,P,2)` holding
    /// (row, col) pairs; returns `(N,C,P)`.
    pub fn sample_points(&mut self, x: Var, points: Var) -> Result<Var> {
        let xv = self.value(x)?;
        let pv = self.value(points)?;
        if xv.rank() != 4 || pv.rank() != 3 || pv.dim(2) != 2 || pv.dim(0) != xv.dim(0) {
            return Err(Error::shape("sample_points", xv.shape(), pv.shape()));
        }
        let (batch, ch, h, w) = (xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3));
        let np = pv.dim(1);
        let mut out = vec![T::zero(); batch * ch * np];
        for n in 0..batch {
            for p in 0..np {
                let base = (n * np + p) * 2;
                let corners = Corners::locate(h, w, pv.data()[base], pv.data()[base + 1]);
                for c in 0..ch {
                    let off = (n * ch + c) * h * w;
                    out[(n * ch + c) * np + p] = corners.sample(&xv.data()[off..off + h * w]);
                }
            }
        }
        let out = Tensor::from_parts(vec![batch, ch, np], out);
        let flops = BILINEAR_FLOPS * out.numel() as u64;
        self.record(&[x, points], out, flops, SamplePointsBackward)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Tensor<f64> {
        Tensor::new(vec![1, 1, 2, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap()
    }

    #[test]
    fn lattice_points_are_exact() {
        let x = Tensor::from_fn(vec![1, 2, 3, 4], |i| (i as f64 * 1.7).cos()).unwrap();
        for c in 0..2 {
            for r in 0..3 {
                for q in 0..4 {
                    let v = bilinear_sample(&x, 0, c, r as f64, q as f64).unwrap();
                    assert_eq!(v, x.at(&[0, c, r, q]));
                }
            }
        }
    }

    #[test]
    fn midpoint_of_four_corners() {
        assert_eq!(bilinear_sample(&grid(), 0, 0, 0.5, 0.5).unwrap(), 1.5);
    }

    #[test]
    fn outside_reads_zero() {
        assert_eq!(bilinear_sample(&grid(), 0, 0, -1.0, -1.0).unwrap(), 0.0);
        assert_eq!(bilinear_sample(&grid(), 0, 0, 50.0, 0.5).unwrap(), 0.0);
        assert_eq!(bilinear_sample(&grid(), 0, 0, f64::NAN, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn linear_between_lattice_points() {
        let x = grid();
        for k in 0..=10 {
            let t = k as f64 / 10.0;
            let v = bilinear_sample(&x, 0, 0, 1.0, t).unwrap();
            assert!((v - (2.0 + t)).abs() < 1e-12);
        }
    }
}
