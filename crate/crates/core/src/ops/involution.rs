//! Spatio-temporal involution.
//!
//! A small generator network maps each (t, h, w) position of the input to a
//! K×K×K kernel per channel group; the output at that position is the
//! kernel-weighted sum over its zero-padded neighborhood plus a per-channel
//! bias. The same aggregation with a learned position-invariant kernel is
//! [`StaticKernelConv`], the non-dynamic counterpart used in ablations.

use rand::Rng;

use super::conv::{Conv, ConvDims, ConvSpec};
use super::init::uniform_fan_in;
use crate::error::{Error, Result};
use crate::numerics::{Backward, BackwardCtx, ParamId, ParamSet, Scalar, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug)]
struct AggGeometry {
    batch: usize,
    channels: usize,
    groups: usize,
    extent: [usize; 3],
    kernel: [usize; 3],
}

impl AggGeometry {
    fn positions(&self) -> usize {
        self.extent.iter().product()
    }

    fn taps(&self) -> usize {
        self.kernel.iter().product()
    }

    fn tap(&self, t: usize) -> [usize; 3] {
        let [_, kh, kw] = self.kernel;
        [t / (kh * kw), (t / kw) % kh, t % kw]
    }

    /// Output index range along `axis` whose source is in bounds for kernel index `k`.
    fn valid(&self, axis: usize, k: usize) -> (usize, usize) {
        let half = self.kernel[axis] / 2;
        let n = self.extent[axis];
        let lo = half.saturating_sub(k);
        let hi = (n + half).saturating_sub(k).min(n);
        if lo >= hi {
            (0, 0)
        } else {
            (lo, hi)
        }
    }

    /// Flat source offset minus flat output offset for tap `t`.
    fn shift(&self, t: usize) -> isize {
        let [a, b, c] = self.tap(t);
        let [_, eh, ew] = self.extent;
        let d = |k: usize, axis: usize| k as isize - (self.kernel[axis] / 2) as isize;
        (d(a, 0) * eh as isize + d(b, 1)) * ew as isize + d(c, 2)
    }
}

/// Visits every (output, source) flat-index pair of tap `t`, in row-major output order.
#[inline]
fn for_each_pair(g: &AggGeometry, t: usize, mut f: impl FnMut(usize, usize)) {
    let [a, b, c] = g.tap(t);
    let (rt, rh, rw) = (g.valid(0, a), g.valid(1, b), g.valid(2, c));
    let [_, eh, ew] = g.extent;
    let shift = g.shift(t);
    for ot in rt.0..rt.1 {
        for oh in rh.0..rh.1 {
            let row = (ot * eh + oh) * ew;
            for ow in rw.0..rw.1 {
                let o = row + ow;
                f(o, (o as isize + shift) as usize);
            }
        }
    }
}

fn aggregate_forward<T: Scalar>(x: &[T], kernels: &[T], bias: Option<&[T]>, g: &AggGeometry) -> Vec<T> {
    let (np, taps) = (g.positions(), g.taps());
    let cpg = g.channels / g.groups;
    let mut out = vec![T::zero(); g.batch * g.channels * np];
    for n in 0..g.batch {
        for c in 0..g.channels {
            let grp = c / cpg;
            let off = (n * g.channels + c) * np;
            let src = &x[off..off + np];
            let dst = &mut out[off..off + np];
            for t in 0..taps {
                let ker = &kernels[((n * g.groups + grp) * taps + t) * np..][..np];
                for_each_pair(g, t, |o, s| dst[o] += ker[o] * src[s]);
            }
            if let Some(b) = bias {
                let bv = b[c];
                dst.iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    out
}

struct AggregateBackward {
    geometry: AggGeometry,
}

impl<T: Scalar> Backward<T> for AggregateBackward {
    fn name(&self) -> &'static str {
        "involution"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let g = &self.geometry;
        let (np, taps) = (g.positions(), g.taps());
        let cpg = g.channels / g.groups;
        let x = ctx.inputs[0].data();
        let kernels = ctx.inputs[1].data();
        let dy = ctx.grad.data();
        let mut dx = ctx.needs[0].then(|| vec![T::zero(); x.len()]);
        let mut dk = ctx.needs[1].then(|| vec![T::zero(); kernels.len()]);

        for n in 0..g.batch {
            for c in 0..g.channels {
                let grp = c / cpg;
                let off = (n * g.channels + c) * np;
                let src = &x[off..off + np];
                let gy = &dy[off..off + np];
                for t in 0..taps {
                    let kbase = ((n * g.groups + grp) * taps + t) * np;
                    let ker = &kernels[kbase..kbase + np];
                    if let Some(dx) = dx.as_mut() {
                        let dst = &mut dx[off..off + np];
                        for_each_pair(g, t, |o, s| dst[s] += ker[o] * gy[o]);
                    }
                    if let Some(dk) = dk.as_mut() {
                        let dst = &mut dk[kbase..kbase + np];
                        for_each_pair(g, t, |o, s| dst[o] += gy[o] * src[s]);
                    }
                }
            }
        }

        let mut out = vec![
            dx.map(|d| Tensor::from_parts(ctx.inputs[0].shape().to_vec(), d)),
            dk.map(|d| Tensor::from_parts(ctx.inputs[1].shape().to_vec(), d)),
        ];
        if ctx.inputs.len() > 2 {
            out.push(ctx.needs[2].then(|| {
                let mut db = vec![T::zero(); g.channels];
                for n in 0..g.batch {
                    for (c, d) in db.iter_mut().enumerate() {
                        for &v in &dy[(n * g.channels + c) * np..][..np] {
                            *d += v;
                        }
                    }
                }
                Tensor::from_parts(vec![g.channels], db)
            }));
        }
        Ok(out)
    }
}

/// FLOPs of the neighborhood aggregation (one multiply-accumulate per channel,
/// position and tap; bias excluded like convolution bias).
pub fn involution_flops(batch: usize, channels: usize, positions: usize, taps: usize) -> u64 {
    2 * (batch * channels * positions * taps) as u64
}

impl<T: Scalar> Tape<T> {
    /// Position-dependent neighborhood aggregation.
    ///
    /// `x`: `(N,C,T,H,W)`; `kernels`: `(N,G,kt·kh·kw,T,H,W)`; optional `bias`: `(C)`.
    pub fn involution(&mut self, x: Var, kernels: Var, bias: Option<Var>, kernel: [usize; 3]) -> Result<Var> {
        let xv = self.value(x)?;
        let kv = self.value(kernels)?;
        if xv.rank() != 5 {
            return Err(Error::InvalidShape(format!(
                "involution input must be (N,C,T,H,W), got {:?}",
                xv.shape()
            )));
        }
        if kernel.iter().any(|k| k % 2 == 0) {
            return Err(Error::InvalidConfig(format!("involution kernel {kernel:?} must be odd")));
        }
        let taps: usize = kernel.iter().product();
        let (batch, channels) = (xv.dim(0), xv.dim(1));
        let extent = [xv.dim(2), xv.dim(3), xv.dim(4)];
        if kv.rank() != 6 || kv.dim(0) != batch || kv.dim(2) != taps || kv.shape()[3..] != extent {
            return Err(Error::shape(
                "involution kernels",
                kv.shape(),
                &[batch, 0, taps, extent[0], extent[1], extent[2]],
            ));
        }
        let groups = kv.dim(1);
        if channels % groups != 0 {
            return Err(Error::InvalidConfig(format!(
                "involution: {groups} groups do not divide {channels} channels"
            )));
        }
        let bias_data = match bias {
            Some(b) => {
                let bv = self.value(b)?;
                if bv.shape() != [channels] {
                    return Err(Error::shape("involution bias", bv.shape(), &[channels]));
                }
                Some(bv.data())
            }
            None => None,
        };
        let geometry = AggGeometry {
            batch,
            channels,
            groups,
            extent,
            kernel,
        };
        let data = aggregate_forward(xv.data(), kv.data(), bias_data, &geometry);
        let out = Tensor::from_parts(xv.shape().to_vec(), data);
        let flops = involution_flops(batch, channels, geometry.positions(), taps);
        let mut inputs = vec![x, kernels];
        inputs.extend(bias);
        self.record(&inputs, out, flops, AggregateBackward { geometry })
    }
}

/// Involution over (T, H, W) with a kernel-generation subnetwork
/// `pointwise(C→C/r) → GELU → pointwise(C/r→G·K³)`.
#[derive(Clone, Debug)]
pub struct Involution3d {
    pub channels: usize,
    pub kernel: usize,
    pub groups: usize,
    pub reduction: usize,
    pub reduce: Conv,
    pub span: Conv,
    pub bias: ParamId,
}

impl Involution3d {
    pub fn new<T: Scalar>(
        params: &mut ParamSet<T>,
        name: &str,
        channels: usize,
        kernel: usize,
        groups: usize,
        reduction: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if groups == 0 || channels % groups != 0 {
            return Err(Error::InvalidConfig(format!(
                "involution: {groups} groups do not divide {channels} channels"
            )));
        }
        if reduction == 0 || channels % reduction != 0 {
            return Err(Error::InvalidConfig(format!(
                "involution: reduction ratio {reduction} does not divide {channels} channels"
            )));
        }
        if kernel % 2 == 0 {
            return Err(Error::InvalidConfig(format!("involution kernel size must be odd, got {kernel}")));
        }
        let hidden = channels / reduction;
        let reduce = Conv::new(
            params,
            &format!("{name}.reduce"),
            ConvSpec::pointwise(channels, hidden, ConvDims::Three),
            rng,
        )?;
        let span = Conv::new(
            params,
            &format!("{name}.span"),
            ConvSpec::pointwise(hidden, groups * kernel.pow(3), ConvDims::Three),
            rng,
        )?;
        let bias = params.add(format!("{name}.bias"), Tensor::zeros(vec![channels])?)?;
        Ok(Involution3d {
            channels,
            kernel,
            groups,
            reduction,
            reduce,
            span,
            bias,
        })
    }

    pub fn param_count(&self) -> usize {
        self.reduce.spec.param_count() + self.span.spec.param_count() + self.channels
    }

    /// The generated kernel field `(N, G, K³, T, H, W)`.
    pub fn kernels<T: Scalar>(&self, tape: &mut Tape<T>, params: &ParamSet<T>, x: Var) -> Result<Var> {
        let shape = tape.value(x)?.shape().to_vec();
        let hidden = self.reduce.forward(tape, params, x)?;
        let act = tape.gelu(hidden)?;
        let flat = self.span.forward(tape, params, act)?;
        tape.reshape(
            flat,
            &[shape[0], self.groups, self.kernel.pow(3), shape[2], shape[3], shape[4]],
        )
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, params: &ParamSet<T>, x: Var) -> Result<Var> {
        let shape = tape.value(x)?.shape().to_vec();
        if shape.len() != 5 || shape[1] != self.channels {
            return Err(Error::shape("involution3d", &shape, &[0, self.channels, 0, 0, 0]));
        }
        let kernels = self.kernels(tape, params, x)?;
        let b = tape.param(params, self.bias);
        tape.involution(x, kernels, Some(b), [self.kernel; 3])
    }
}

/// Learned position-invariant kernel shared by the channels of each group,
/// applied with the same aggregation as involution (2D or 3D).
#[derive(Clone, Debug)]
pub struct StaticKernelConv {
    pub channels: usize,
    pub kernel: usize,
    pub groups: usize,
    pub dims: ConvDims,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl StaticKernelConv {
    pub fn new<T: Scalar>(
        params: &mut ParamSet<T>,
        name: &str,
        channels: usize,
        kernel: usize,
        groups: usize,
        dims: ConvDims,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if groups == 0 || channels % groups != 0 {
            return Err(Error::InvalidConfig(format!(
                "static kernel: {groups} groups do not divide {channels} channels"
            )));
        }
        if kernel % 2 == 0 {
            return Err(Error::InvalidConfig(format!("kernel size must be odd, got {kernel}")));
        }
        let taps = kernel.pow(dims.rank() as u32);
        let weight = params.add(
            format!("{name}.weight"),
            uniform_fan_in(vec![groups, taps], taps, rng)?,
        )?;
        let bias = if bias {
            Some(params.add(format!("{name}.bias"), Tensor::zeros(vec![channels])?)?)
        } else {
            None
        };
        Ok(StaticKernelConv {
            channels,
            kernel,
            groups,
            dims,
            weight,
            bias,
        })
    }

    pub fn taps(&self) -> usize {
        self.kernel.pow(self.dims.rank() as u32)
    }

    pub fn param_count(&self) -> usize {
        self.groups * self.taps() + if self.bias.is_some() { self.channels } else { 0 }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, params: &ParamSet<T>, x: Var) -> Result<Var> {
        let shape = tape.value(x)?.shape().to_vec();
        if shape.len() != self.dims.rank() + 2 || shape[1] != self.channels {
            return Err(Error::shape("static_kernel_conv", &shape, &[0, self.channels]));
        }
        let (x5, extent, kernel) = match self.dims {
            ConvDims::Two => (
                tape.reshape(x, &[shape[0], shape[1], 1, shape[2], shape[3]])?,
                [1, shape[2], shape[3]],
                [1, self.kernel, self.kernel],
            ),
            ConvDims::Three => (x, [shape[2], shape[3], shape[4]], [self.kernel; 3]),
        };
        let taps = self.taps();
        let w = tape.param(params, self.weight);
        let w = tape.reshape(w, &[1, self.groups, taps, 1, 1, 1])?;
        let field = tape.expand(w, &[shape[0], self.groups, taps, extent[0], extent[1], extent[2]])?;
        let b = self.bias.map(|b| tape.param(params, b));
        let y = tape.involution(x5, field, b, kernel)?;
        tape.reshape(y, &shape)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_kernels_leave_bias() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_fn(vec![1, 2, 3, 4, 4], |i| i as f64).unwrap());
        let k = tape.constant(Tensor::zeros(vec![1, 1, 27, 3, 4, 4]).unwrap());
        let b = tape.constant(Tensor::full(vec![2], 0.5).unwrap());
        let y = tape.involution(x, k, Some(b), [3, 3, 3]).unwrap();
        assert!(tape.value(y).unwrap().data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn construction_checks_divisibility() {
        let mut ps = ParamSet::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(Involution3d::new(&mut ps, "a", 6, 3, 1, 4, &mut rng).is_err());
        assert!(Involution3d::new(&mut ps, "b", 8, 3, 3, 4, &mut rng).is_err());
        assert!(Involution3d::new(&mut ps, "c", 8, 2, 1, 4, &mut rng).is_err());
        let inv = Involution3d::new(&mut ps, "d", 8, 3, 2, 4, &mut rng).unwrap();
        // 8→2 (+2), 2→54 (+54), bias 8
        assert_eq!(inv.param_count(), 8 * 2 + 2 + 2 * 54 + 54 + 8);
    }
}
