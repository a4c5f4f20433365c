//! Pointwise and standard (cross-correlation) convolutions over 2D or 3D grids.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::init::uniform_fan_in;
use crate::error::{Error, Result};
use crate::numerics::{Backward, BackwardCtx, ParamId, ParamSet, Scalar, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConvDims {
    Two,
    Three,
}

impl ConvDims {
    pub fn rank(self) -> usize {
        match self {
            ConvDims::Two => 2,
            ConvDims::Three => 3,
        }
    }
}

/// Geometry of a convolution layer with a cubic (or square) kernel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub dims: ConvDims,
    pub bias: bool,
}

impl ConvSpec {
    pub fn pointwise(in_channels: usize, out_channels: usize, dims: ConvDims) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel: 1,
            stride: 1,
            padding: 0,
            dims,
            bias: true,
        }
    }

    /// Stride-1 convolution padded to preserve spatial size; `kernel` must be odd.
    pub fn same(in_channels: usize, out_channels: usize, kernel: usize, dims: ConvDims) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel,
            stride: 1,
            padding: kernel.saturating_sub(1) / 2,
            dims,
            bias: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::InvalidConfig("convolution channels must be positive".into()));
        }
        if self.kernel == 0 || self.stride == 0 {
            return Err(Error::InvalidConfig("kernel size and stride must be ≥ 1".into()));
        }
        if self.padding != 0 && (self.kernel % 2 == 0 || self.padding != (self.kernel - 1) / 2) {
            return Err(Error::InvalidConfig(format!(
                "padded convolutions need an odd kernel with padding (K-1)/2, got K={} padding={}",
                self.kernel, self.padding
            )));
        }
        Ok(())
    }

    pub fn taps(&self) -> usize {
        self.kernel.pow(self.dims.rank() as u32)
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        if self.kernel == 1 && self.stride == 1 {
            return vec![self.out_channels, self.in_channels];
        }
        let mut s = vec![self.out_channels, self.in_channels];
        s.extend(std::iter::repeat(self.kernel).take(self.dims.rank()));
        s
    }

    pub fn param_count(&self) -> usize {
        self.out_channels * self.in_channels * self.taps() + if self.bias { self.out_channels } else { 0 }
    }

    pub fn output_extent(&self, input: usize) -> Option<usize> {
        let padded = input + 2 * self.padding;
        if padded < self.kernel {
            return None;
        }
        Some((padded - self.kernel) / self.stride + 1)
    }
}

// ---------------------------------------------------------------------------
// pointwise

fn pointwise_forward<T: Scalar>(
    x: &[T],
    w: &[T],
    b: Option<&[T]>,
    batch: usize,
    cin: usize,
    cout: usize,
    s: usize,
) -> Vec<T> {
    let mut out = vec![T::zero(); batch * cout * s];
    for n in 0..batch {
        let xn = &x[n * cin * s..(n + 1) * cin * s];
        for co in 0..cout {
            let dst = &mut out[(n * cout + co) * s..(n * cout + co + 1) * s];
            for ci in 0..cin {
                let wv = w[co * cin + ci];
                let src = &xn[ci * s..(ci + 1) * s];
                for (o, &xv) in dst.iter_mut().zip(src) {
                    *o += wv * xv;
                }
            }
            if let Some(b) = b {
                let bv = b[co];
                dst.iter_mut().for_each(|o| *o += bv);
            }
        }
    }
    out
}

struct PointwiseBackward {
    batch: usize,
    cin: usize,
    cout: usize,
    s: usize,
}

impl<T: Scalar> Backward<T> for PointwiseBackward {
    fn name(&self) -> &'static str {
        "pointwise_conv"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let PointwiseBackward { batch, cin, cout, s } = *self;
        let x = ctx.inputs[0].data();
        let w = ctx.inputs[1].data();
        let dy = ctx.grad.data();
        let mut out = Vec::with_capacity(3);

        out.push(if ctx.needs[0] {
            let mut dx = vec![T::zero(); batch * cin * s];
            for n in 0..batch {
                for ci in 0..cin {
                    let dst = &mut dx[(n * cin + ci) * s..(n * cin + ci + 1) * s];
                    for co in 0..cout {
                        let wv = w[co * cin + ci];
                        let g = &dy[(n * cout + co) * s..(n * cout + co + 1) * s];
                        for (d, &gv) in dst.iter_mut().zip(g) {
                            *d += wv * gv;
                        }
                    }
                }
            }
            Some(Tensor::from_parts(ctx.inputs[0].shape().to_vec(), dx))
        } else {
            None
        });

        out.push(if ctx.needs[1] {
            let mut dw = vec![T::zero(); cout * cin];
            for n in 0..batch {
                for co in 0..cout {
                    let g = &dy[(n * cout + co) * s..(n * cout + co + 1) * s];
                    for ci in 0..cin {
                        let xs = &x[(n * cin + ci) * s..(n * cin + ci + 1) * s];
                        let mut acc = T::zero();
                        for (&gv, &xv) in g.iter().zip(xs) {
                            acc += gv * xv;
                        }
                        dw[co * cin + ci] += acc;
                    }
                }
            }
            Some(Tensor::from_parts(ctx.inputs[1].shape().to_vec(), dw))
        } else {
            None
        });

        if ctx.inputs.len() > 2 {
            out.push(if ctx.needs[2] { Some(bias_grad(dy, batch, cout, s, ctx.inputs[2].shape())) } else { None });
        }
        Ok(out)
    }
}

fn bias_grad<T: Scalar>(dy: &[T], batch: usize, cout: usize, s: usize, shape: &[usize]) -> Tensor<T> {
    let mut db = vec![T::zero(); cout];
    for n in 0..batch {
        for (co, d) in db.iter_mut().enumerate() {
            for &g in &dy[(n * cout + co) * s..(n * cout + co + 1) * s] {
                *d += g;
            }
        }
    }
    Tensor::from_parts(shape.to_vec(), db)
}

// ---------------------------------------------------------------------------
// standard convolution, computed as 3D with a unit depth for 2D inputs

#[derive(Clone, Copy, Debug)]
struct Geometry {
    batch: usize,
    cin: usize,
    cout: usize,
    input: [usize; 3],
    output: [usize; 3],
    kernel: [usize; 3],
    stride: [usize; 3],
    pad: [usize; 3],
}

impl Geometry {
    fn in_plane(&self) -> usize {
        self.input.iter().product()
    }

    fn out_plane(&self) -> usize {
        self.output.iter().product()
    }

    fn taps(&self) -> usize {
        self.kernel.iter().product()
    }

    /// Input coordinate along `axis` for output index `o` and kernel index `k`.
    #[inline]
    fn source(&self, axis: usize, o: usize, k: usize) -> Option<usize> {
        let i = (o * self.stride[axis] + k) as isize - self.pad[axis] as isize;
        (i >= 0 && (i as usize) < self.input[axis]).then_some(i as usize)
    }

    /// Output index range `[lo, hi)` whose source along `axis` is in bounds for tap `k`.
    fn valid_range(&self, axis: usize, k: usize) -> (usize, usize) {
        let mut lo = self.output[axis];
        let mut hi = 0;
        for o in 0..self.output[axis] {
            if self.source(axis, o, k).is_some() {
                lo = lo.min(o);
                hi = o + 1;
            }
        }
        if lo >= hi {
            (0, 0)
        } else {
            (lo, hi)
        }
    }
}

fn conv_forward<T: Scalar>(x: &[T], w: &[T], b: Option<&[T]>, g: &Geometry) -> Vec<T> {
    let (ip, op, taps) = (g.in_plane(), g.out_plane(), g.taps());
    let [_, ih, iw] = g.input;
    let [_, oh, ow] = g.output;
    let [_, kh, kw] = g.kernel;
    let mut out = vec![T::zero(); g.batch * g.cout * op];
    let ranges: Vec<[(usize, usize); 3]> = (0..taps)
        .map(|t| {
            let (a, r) = (t / (kh * kw), t % (kh * kw));
            [g.valid_range(0, a), g.valid_range(1, r / kw), g.valid_range(2, r % kw)]
        })
        .collect();
    for n in 0..g.batch {
        for co in 0..g.cout {
            let dst = &mut out[(n * g.cout + co) * op..(n * g.cout + co + 1) * op];
            for ci in 0..g.cin {
                let src = &x[(n * g.cin + ci) * ip..(n * g.cin + ci + 1) * ip];
                let wbase = (co * g.cin + ci) * taps;
                for t in 0..taps {
                    let wv = w[wbase + t];
                    let (a, r) = (t / (kh * kw), t % (kh * kw));
                    let (bb, c) = (r / kw, r % kw);
                    let [rd, rh, rw] = ranges[t];
                    for od in rd.0..rd.1 {
                        let id = od * g.stride[0] + a - g.pad[0];
                        for oy in rh.0..rh.1 {
                            let iy = oy * g.stride[1] + bb - g.pad[1];
                            let orow = (od * oh + oy) * ow;
                            let irow = (id * ih + iy) * iw;
                            for ox in rw.0..rw.1 {
                                let ix = ox * g.stride[2] + c - g.pad[2];
                                dst[orow + ox] += wv * src[irow + ix];
                            }
                        }
                    }
                }
            }
            if let Some(b) = b {
                let bv = b[co];
                dst.iter_mut().for_each(|o| *o += bv);
            }
        }
    }
    out
}

struct ConvBackward {
    geometry: Geometry,
}

impl<T: Scalar> Backward<T> for ConvBackward {
    fn name(&self) -> &'static str {
        "conv"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let g = &self.geometry;
        let (ip, op, taps) = (g.in_plane(), g.out_plane(), g.taps());
        let [_, ih, iw] = g.input;
        let [_, oh, ow] = g.output;
        let [_, kh, kw] = g.kernel;
        let x = ctx.inputs[0].data();
        let w = ctx.inputs[1].data();
        let dy = ctx.grad.data();
        let mut dx = ctx.needs[0].then(|| vec![T::zero(); x.len()]);
        let mut dw = ctx.needs[1].then(|| vec![T::zero(); w.len()]);
        let ranges: Vec<[(usize, usize); 3]> = (0..taps)
            .map(|t| {
                let (a, r) = (t / (kh * kw), t % (kh * kw));
                [g.valid_range(0, a), g.valid_range(1, r / kw), g.valid_range(2, r % kw)]
            })
            .collect();

        for n in 0..g.batch {
            for co in 0..g.cout {
                let gy = &dy[(n * g.cout + co) * op..(n * g.cout + co + 1) * op];
                for ci in 0..g.cin {
                    let xoff = (n * g.cin + ci) * ip;
                    let wbase = (co * g.cin + ci) * taps;
                    for t in 0..taps {
                        let wv = w[wbase + t];
                        let (a, r) = (t / (kh * kw), t % (kh * kw));
                        let (bb, c) = (r / kw, r % kw);
                        let [rd, rh, rw] = ranges[t];
                        let mut acc = T::zero();
                        for od in rd.0..rd.1 {
                            let id = od * g.stride[0] + a - g.pad[0];
                            for oy in rh.0..rh.1 {
                                let iy = oy * g.stride[1] + bb - g.pad[1];
                                let orow = (od * oh + oy) * ow;
                                let irow = xoff + (id * ih + iy) * iw;
                                for ox in rw.0..rw.1 {
                                    let ix = ox * g.stride[2] + c - g.pad[2];
                                    let gv = gy[orow + ox];
                                    if let Some(dx) = dx.as_mut() {
                                        dx[irow + ix] += wv * gv;
                                    }
                                    acc += gv * x[irow + ix];
                                }
                            }
                        }
                        if let Some(dw) = dw.as_mut() {
                            dw[wbase + t] += acc;
                        }
                    }
                }
            }
        }

        let mut out = vec![
            dx.map(|d| Tensor::from_parts(ctx.inputs[0].shape().to_vec(), d)),
            dw.map(|d| Tensor::from_parts(ctx.inputs[1].shape().to_vec(), d)),
        ];
        if ctx.inputs.len() > 2 {
            out.push(ctx.needs[2].then(|| bias_grad(dy, g.batch, g.cout, op, ctx.inputs[2].shape())));
        }
        Ok(out)
    }
}

/// FLOPs of a convolution under the multiply-accumulate = 2 convention (bias excluded).
pub fn conv_flops(out_positions: usize, cout: usize, cin: usize, taps: usize) -> u64 {
    2 * (out_positions * cout * cin * taps) as u64
}

impl<T: Scalar> Tape<T> {
    /// `out[n,co,·] = Σ_ci w[co,ci]·x[n,ci,·] + b[co]` for `x` of shape `(N, C_in, …)`.
    pub fn pointwise_conv(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xv = self.value(x)?;
        let wv = self.value(w)?;
        if xv.rank() < 2 || wv.rank() != 2 || wv.dim(1) != xv.dim(1) {
            return Err(Error::shape("pointwise_conv", xv.shape(), wv.shape()));
        }
        let (batch, cin, cout) = (xv.dim(0), xv.dim(1), wv.dim(0));
        let s = xv.numel() / (batch * cin);
        let bias = match b {
            Some(b) => {
                let bv = self.value(b)?;
                if bv.shape() != [cout] {
                    return Err(Error::shape("pointwise_conv bias", bv.shape(), &[cout]));
                }
                Some(bv.data())
            }
            None => None,
        };
        let data = pointwise_forward(xv.data(), wv.data(), bias, batch, cin, cout, s);
        let mut shape = xv.shape().to_vec();
        shape[1] = cout;
        let out = Tensor::from_parts(shape, data);
        let flops = conv_flops(batch * s, cout, cin, 1);
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.record(&inputs, out, flops, PointwiseBackward { batch, cin, cout, s })
    }

    /// Zero-padded cross-correlation for `(N,C,H,W)` with a `(C_out,C_in,K,K)`
    /// weight, or `(N,C,D,H,W)` with a `(C_out,C_in,K,K,K)` weight.
    pub fn conv(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let xv = self.value(x)?;
        let wv = self.value(w)?;
        let spatial = xv.rank().wrapping_sub(2);
        if !(spatial == 2 || spatial == 3) || wv.rank() != xv.rank() || wv.dim(1) != xv.dim(1) {
            return Err(Error::shape("conv", xv.shape(), wv.shape()));
        }
        if stride == 0 {
            return Err(Error::InvalidConfig("stride must be ≥ 1".into()));
        }
        let lift = |s: &[usize], fill: usize| -> [usize; 3] {
            if s.len() == 2 {
                [fill, s[0], s[1]]
            } else {
                [s[0], s[1], s[2]]
            }
        };
        let input = lift(&xv.shape()[2..], 1);
        let kernel = lift(&wv.shape()[2..], 1);
        let (stride3, pad3) = if spatial == 2 {
            ([1, stride, stride], [0, padding, padding])
        } else {
            ([stride; 3], [padding; 3])
        };
        let mut output = [0; 3];
        for a in 0..3 {
            let padded = input[a] + 2 * pad3[a];
            if padded < kernel[a] {
                return Err(Error::InvalidShape(format!(
                    "conv: kernel {:?} larger than padded input {:?}",
                    &wv.shape()[2..],
                    &xv.shape()[2..]
                )));
            }
            output[a] = (padded - kernel[a]) / stride3[a] + 1;
        }
        let geometry = Geometry {
            batch: xv.dim(0),
            cin: xv.dim(1),
            cout: wv.dim(0),
            input,
            output,
            kernel,
            stride: stride3,
            pad: pad3,
        };
        let bias = match b {
            Some(b) => {
                let bv = self.value(b)?;
                if bv.shape() != [geometry.cout] {
                    return Err(Error::shape("conv bias", bv.shape(), &[geometry.cout]));
                }
                Some(bv.data())
            }
            None => None,
        };
        let data = conv_forward(xv.data(), wv.data(), bias, &geometry);
        let mut shape = vec![geometry.batch, geometry.cout];
        if spatial == 2 {
            shape.extend_from_slice(&output[1..]);
        } else {
            shape.extend_from_slice(&output);
        }
        let out = Tensor::from_parts(shape, data);
        let flops = conv_flops(
            geometry.batch * geometry.out_plane(),
            geometry.cout,
            geometry.cin,
            geometry.taps(),
        );
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.record(&inputs, out, flops, ConvBackward { geometry })
    }
}

// ---------------------------------------------------------------------------
// layers

/// A convolution layer owning its weight and optional bias parameters.
#[derive(Clone, Debug)]
pub struct Conv {
    pub spec: ConvSpec,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Conv {
    /// Weights uniform in ±1/√fan_in, bias zero.
    pub fn new<T: Scalar>(
        params: &mut ParamSet<T>,
        name: &str,
        spec: ConvSpec,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        spec.validate()?;
        let fan_in = spec.in_channels * spec.taps();
        let weight = params.add(
            format!("{name}.weight"),
            uniform_fan_in(spec.weight_shape(), fan_in, rng)?,
        )?;
        let bias = if spec.bias {
            Some(params.add(format!("{name}.bias"), Tensor::zeros(vec![spec.out_channels])?)?)
        } else {
            None
        };
        Ok(Conv { spec, weight, bias })
    }

    /// Zero weights and bias, e.g. for offset branches that must start inert.
    pub fn zeroed<T: Scalar>(params: &mut ParamSet<T>, name: &str, spec: ConvSpec) -> Result<Self> {
        spec.validate()?;
        let weight = params.add(format!("{name}.weight"), Tensor::zeros(spec.weight_shape())?)?;
        let bias = if spec.bias {
            Some(params.add(format!("{name}.bias"), Tensor::zeros(vec![spec.out_channels])?)?)
        } else {
            None
        };
        Ok(Conv { spec, weight, bias })
    }

    pub fn is_pointwise(&self) -> bool {
        self.spec.kernel == 1 && self.spec.stride == 1
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, params: &ParamSet<T>, x: Var) -> Result<Var> {
        let channels = tape.value(x)?.shape().get(1).copied();
        if channels != Some(self.spec.in_channels) {
            return Err(Error::shape(
                "conv input channels",
                tape.value(x)?.shape(),
                &[self.spec.in_channels],
            ));
        }
        let expected_rank = self.spec.dims.rank() + 2;
        if tape.value(x)?.rank() != expected_rank {
            return Err(Error::InvalidShape(format!(
                "{}D convolution expects a rank-{expected_rank} input, got {:?}",
                self.spec.dims.rank(),
                tape.value(x)?.shape()
            )));
        }
        let w = tape.param(params, self.weight);
        let b = self.bias.map(|b| tape.param(params, b));
        if self.is_pointwise() {
            tape.pointwise_conv(x, w, b)
        } else {
            tape.conv(x, w, b, self.spec.stride, self.spec.padding)
        }
    }
}
