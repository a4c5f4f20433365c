//! Deformable dynamic convolution.
//!
//! Each output position `p0` aggregates `Σ_n kernel[p0](n) · x(p0 + p_n + Δp_n)`
//! over the K×K receptive field. Kernels are produced per position by a
//! pointwise branch and offsets by a K×K convolution branch; samples at
//! fractional positions are bilinear with zero padding. Offsets are shared by
//! all channels, kernels by the channels of a group.

use rand::Rng;

use super::bilinear::{Corners, BILINEAR_FLOPS};
use super::conv::{Conv, ConvDims, ConvSpec};
use crate::error::{Error, Result};
use crate::numerics::{Backward, BackwardCtx, ParamSet, Scalar, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug)]
struct DdcGeometry {
    batch: usize,
    channels: usize,
    groups: usize,
    h: usize,
    w: usize,
    kernel: usize,
}

impl DdcGeometry {
    fn taps(&self) -> usize {
        self.kernel * self.kernel
    }

    fn plane(&self) -> usize {
        self.h * self.w
    }

    /// Sampling corners for tap `t` at position `p` of batch item `n`.
    #[inline]
    fn corners<T: Scalar>(&self, offsets: &[T], n: usize, t: usize, p: usize) -> Corners<T> {
        let (kk, hw, half) = (self.taps(), self.plane(), (self.kernel / 2) as f64);
        let (y, x) = (p / self.w, p % self.w);
        let (i, j) = (t / self.kernel, t % self.kernel);
        let dr = offsets[(n * 2 * kk + 2 * t) * hw + p];
        let dq = offsets[(n * 2 * kk + 2 * t + 1) * hw + p];
        // (p0 + p_n) is integral, then the learned displacement is added
        let r = T::of(y as f64 + i as f64 - half) + dr;
        let q = T::of(x as f64 + j as f64 - half) + dq;
        Corners::locate(self.h, self.w, r, q)
    }
}

fn ddc_forward_kernel<T: Scalar>(x: &[T], offsets: &[T], kernels: &[T], g: &DdcGeometry) -> Vec<T> {
    let (hw, kk) = (g.plane(), g.taps());
    let cpg = g.channels / g.groups;
    let mut out = vec![T::zero(); g.batch * g.channels * hw];
    for n in 0..g.batch {
        for p in 0..hw {
            for t in 0..kk {
                let corners = g.corners(offsets, n, t, p);
                for grp in 0..g.groups {
                    let k = kernels[((n * g.groups + grp) * kk + t) * hw + p];
                    for c in grp * cpg..(grp + 1) * cpg {
                        let off = (n * g.channels + c) * hw;
                        out[off + p] += k * corners.sample(&x[off..off + hw]);
                    }
                }
            }
        }
    }
    out
}

struct DdcBackward {
    geometry: DdcGeometry,
}

impl<T: Scalar> Backward<T> for DdcBackward {
    fn name(&self) -> &'static str {
        "ddc"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let g = &self.geometry;
        let (hw, kk) = (g.plane(), g.taps());
        let cpg = g.channels / g.groups;
        let x = ctx.inputs[0].data();
        let offsets = ctx.inputs[1].data();
        let kernels = ctx.inputs[2].data();
        let dy = ctx.grad.data();
        let mut dx = ctx.needs[0].then(|| vec![T::zero(); x.len()]);
        let mut doff = ctx.needs[1].then(|| vec![T::zero(); offsets.len()]);
        let mut dker = ctx.needs[2].then(|| vec![T::zero(); kernels.len()]);

        for n in 0..g.batch {
            for p in 0..hw {
                for t in 0..kk {
                    let corners = g.corners(offsets, n, t, p);
                    let (mut gr, mut gq) = (T::zero(), T::zero());
                    for grp in 0..g.groups {
                        let kidx = ((n * g.groups + grp) * kk + t) * hw + p;
                        let k = kernels[kidx];
                        let mut gk = T::zero();
                        for c in grp * cpg..(grp + 1) * cpg {
                            let off = (n * g.channels + c) * hw;
                            let plane = &x[off..off + hw];
                            let gy = dy[off + p];
                            if dker.is_some() {
                                gk += gy * corners.sample(plane);
                            }
                            let gs = gy * k;
                            if let Some(dx) = dx.as_mut() {
                                for (cell, &wt) in corners.cells.iter().zip(&corners.weights) {
                                    if let Some(i) = cell {
                                        dx[off + i] += gs * wt;
                                    }
                                }
                            }
                            if doff.is_some() {
                                let (pr, pq) = corners.position_grad(plane);
                                gr += gs * pr;
                                gq += gs * pq;
                            }
                        }
                        if let Some(dker) = dker.as_mut() {
                            dker[kidx] += gk;
                        }
                    }
                    if let Some(doff) = doff.as_mut() {
                        doff[(n * 2 * kk + 2 * t) * hw + p] += gr;
                        doff[(n * 2 * kk + 2 * t + 1) * hw + p] += gq;
                    }
                }
            }
        }
        Ok(vec![
            dx.map(|d| Tensor::from_parts(ctx.inputs[0].shape().to_vec(), d)),
            doff.map(|d| Tensor::from_parts(ctx.inputs[1].shape().to_vec(), d)),
            dker.map(|d| Tensor::from_parts(ctx.inputs[2].shape().to_vec(), d)),
        ])
    }
}

/// FLOPs of the sampling-and-weighting stage: per channel, position and tap,
/// one bilinear sample plus one multiply-accumulate.
pub fn ddc_flops(batch: usize, channels: usize, positions: usize, kernel: usize) -> u64 {
    (batch * channels * positions * kernel * kernel) as u64 * (BILINEAR_FLOPS + 2)
}

impl<T: Scalar> Tape<T> {
    /// `x`: `(N,C,H,W)`; `offsets`: `(N,2K²,H,W)` as (Δrow, Δcol) pairs per tap;
    /// `kernels`: `(N,G,K²,H,W)`. Returns `(N,C,H,W)`.
    pub fn ddc(&mut self, x: Var, offsets: Var, kernels: Var, kernel: usize) -> Result<Var> {
        let xv = self.value(x)?;
        let ov = self.value(offsets)?;
        let kv = self.value(kernels)?;
        if xv.rank() != 4 {
            return Err(Error::InvalidShape(format!("ddc input must be (N,C,H,W), got {:?}", xv.shape())));
        }
        if kernel % 2 == 0 {
            return Err(Error::InvalidConfig(format!("ddc kernel size must be odd, got {kernel}")));
        }
        let (batch, channels, h, w) = (xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3));
        let kk = kernel * kernel;
        if ov.shape() != [batch, 2 * kk, h, w] {
            return Err(Error::shape("ddc offsets", ov.shape(), &[batch, 2 * kk, h, w]));
        }
        if kv.rank() != 5 || kv.dim(0) != batch || kv.dim(2) != kk || kv.dim(3) != h || kv.dim(4) != w {
            return Err(Error::shape("ddc kernels", kv.shape(), &[batch, 0, kk, h, w]));
        }
        let groups = kv.dim(1);
        if channels % groups != 0 {
            return Err(Error::InvalidConfig(format!(
                "ddc: {groups} kernel groups do not divide {channels} channels"
            )));
        }
        let geometry = DdcGeometry {
            batch,
            channels,
            groups,
            h,
            w,
            kernel,
        };
        let data = ddc_forward_kernel(xv.data(), ov.data(), kv.data(), &geometry);
        let out = Tensor::from_parts(xv.shape().to_vec(), data);
        let flops = ddc_flops(batch, channels, h * w, kernel);
        self.record(&[x, offsets, kernels], out, flops, DdcBackward { geometry })
    }
}

/// Complete DDC layer: offset branch (K×K conv, zero-initialized), kernel
/// branch (pointwise conv), and the deformable aggregation.
#[derive(Clone, Debug)]
pub struct DdcLayer {
    pub channels: usize,
    pub kernel: usize,
    pub groups: usize,
    pub offset_branch: Conv,
    pub kernel_branch: Conv,
}

impl DdcLayer {
    pub fn new<T: Scalar>(
        params: &mut ParamSet<T>,
        name: &str,
        channels: usize,
        kernel: usize,
        groups: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if groups == 0 || channels % groups != 0 {
            return Err(Error::InvalidConfig(format!(
                "ddc: {groups} groups do not divide {channels} channels"
            )));
        }
        if kernel % 2 == 0 {
            return Err(Error::InvalidConfig(format!("ddc kernel size must be odd, got {kernel}")));
        }
        let kk = kernel * kernel;
        let offset_branch = Conv::zeroed(
            params,
            &format!("{name}.offset"),
            ConvSpec::same(channels, 2 * kk, kernel, ConvDims::Two),
        )?;
        let kernel_branch = Conv::new(
            params,
            &format!("{name}.kernel"),
            ConvSpec::pointwise(channels, groups * kk, ConvDims::Two),
            rng,
        )?;
        Ok(DdcLayer {
            channels,
            kernel,
            groups,
            offset_branch,
            kernel_branch,
        })
    }

    pub fn param_count(&self) -> usize {
        self.offset_branch.spec.param_count() + self.kernel_branch.spec.param_count()
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, params: &ParamSet<T>, x: Var) -> Result<Var> {
        let shape = tape.value(x)?.shape().to_vec();
        if shape.len() != 4 || shape[1] != self.channels {
            return Err(Error::shape("ddc_layer", &shape, &[0, self.channels, 0, 0]));
        }
        let offsets = self.offset_branch.forward(tape, params, x)?;
        let flat = self.kernel_branch.forward(tape, params, x)?;
        let kk = self.kernel * self.kernel;
        let kernels = tape.reshape(flat, &[shape[0], self.groups, kk, shape[2], shape[3]])?;
        tape.ddc(x, offsets, kernels, self.kernel)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(x: &Tensor<f64>, offsets: &Tensor<f64>, kernels: &Tensor<f64>, k: usize) -> Tensor<f64> {
        let mut tape = Tape::new();
        let (a, b, c) = (
            tape.constant(x.clone()),
            tape.constant(offsets.clone()),
            tape.constant(kernels.clone()),
        );
        let y = tape.ddc(a, b, c, k).unwrap();
        tape.value(y).unwrap().clone()
    }

    #[test]
    fn center_one_hot_is_identity() {
        let x = Tensor::from_fn(vec![2, 3, 4, 5], |i| (i as f64 * 0.31).sin()).unwrap();
        let off = Tensor::zeros(vec![2, 18, 4, 5]).unwrap();
        let mut ker = Tensor::zeros(vec![2, 1, 9, 4, 5]).unwrap();
        for n in 0..2 {
            for y in 0..4 {
                for z in 0..5 {
                    ker.set(&[n, 0, 4, y, z], 1.0);
                }
            }
        }
        assert_eq!(run(&x, &off, &ker, 3), x);
    }

    #[test]
    fn uniform_average_of_ones() {
        let x = Tensor::ones(vec![1, 1, 3, 3]).unwrap();
        let off = Tensor::zeros(vec![1, 18, 3, 3]).unwrap();
        let ker = Tensor::full(vec![1, 1, 9, 3, 3], 1.0 / 9.0).unwrap();
        let y = run(&x, &off, &ker, 3);
        assert!((y.at(&[0, 0, 1, 1]) - 1.0).abs() < 1e-12);
        for (i, &v) in y.data().iter().enumerate() {
            if i != 4 {
                assert!(v < 1.0);
            }
        }
    }

    #[test]
    fn misaligned_fields_rejected() {
        let x = Tensor::<f64>::zeros(vec![1, 2, 4, 4]).unwrap();
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let off = tape.constant(Tensor::zeros(vec![1, 18, 4, 3]).unwrap());
        let ker = tape.constant(Tensor::zeros(vec![1, 1, 9, 4, 4]).unwrap());
        assert!(tape.ddc(xv, off, ker, 3).is_err());
        let off = tape.constant(Tensor::zeros(vec![1, 18, 4, 4]).unwrap());
        let ker = tape.constant(Tensor::zeros(vec![1, 3, 9, 4, 4]).unwrap());
        assert!(tape.ddc(xv, off, ker, 3).is_err());
    }
}
