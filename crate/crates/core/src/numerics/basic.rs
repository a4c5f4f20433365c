//! Elementwise arithmetic, GELU, shape manipulation and reductions.

use super::tape::{Backward, BackwardCtx};
use super::tensor::{numel, strides};
use super::{Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// FLOPs charged per element for GELU (erf evaluation path).
pub const GELU_FLOPS_PER_ELEMENT: u64 = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
}

struct ElementwiseBackward(ElementwiseOp);

impl<T: Scalar> Backward<T> for ElementwiseBackward {
    fn name(&self) -> &'static str {
        match self.0 {
            ElementwiseOp::Add => "add",
            ElementwiseOp::Sub => "sub",
            ElementwiseOp::Mul => "mul",
        }
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let g = ctx.grad;
        let (a, b) = (ctx.inputs[0], ctx.inputs[1]);
        Ok(match self.0 {
            ElementwiseOp::Add => vec![
                ctx.needs[0].then(|| g.clone()),
                ctx.needs[1].then(|| g.clone()),
            ],
            ElementwiseOp::Sub => vec![
                ctx.needs[0].then(|| g.clone()),
                ctx.needs[1].then(|| g.map(|v| -v)),
            ],
            ElementwiseOp::Mul => vec![
                if ctx.needs[0] { Some(g.zip_map(b, "mul", |g, b| g * b)?) } else { None },
                if ctx.needs[1] { Some(g.zip_map(a, "mul", |g, a| g * a)?) } else { None },
            ],
        })
    }
}

/// Exact GELU, `x·Φ(x)` with Φ from the error function.
pub fn gelu_scalar<T: Scalar>(x: T) -> T {
    let half = T::of(0.5);
    x * half * (T::one() + (x * T::of(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

/// Derivative `Φ(x) + x·φ(x)`.
pub fn gelu_grad_scalar<T: Scalar>(x: T) -> T {
    let half = T::of(0.5);
    let cdf = half * (T::one() + (x * T::of(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-(x * x) * half).exp() * T::of(0.398_942_280_401_432_7);
    cdf + x * pdf
}

struct GeluBackward;

impl<T: Scalar> Backward<T> for GeluBackward {
    fn name(&self) -> &'static str {
        "gelu"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        Ok(vec![Some(ctx.grad.zip_map(ctx.inputs[0], "gelu", |g, x| {
            g * gelu_grad_scalar(x)
        })?)])
    }
}

struct ReshapeBackward;

impl<T: Scalar> Backward<T> for ReshapeBackward {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        Ok(vec![Some(ctx.grad.reshape(ctx.inputs[0].shape().to_vec())?)])
    }
}

struct PermuteBackward {
    inverse: Vec<usize>,
}

impl<T: Scalar> Backward<T> for PermuteBackward {
    fn name(&self) -> &'static str {
        "permute"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        Ok(vec![Some(ctx.grad.permute(&self.inverse)?)])
    }
}

struct ExpandBackward;

impl<T: Scalar> Backward<T> for ExpandBackward {
    fn name(&self) -> &'static str {
        "expand"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let in_shape = ctx.inputs[0].shape();
        let out_shape = ctx.grad.shape();
        let in_strides = strides(in_shape);
        let rank = out_shape.len();
        let mut out = Tensor::zeros(in_shape.to_vec())?;
        let mut idx = vec![0usize; rank];
        let dst = out.data_mut();
        for &g in ctx.grad.data() {
            let mut o = 0;
            for ax in 0..rank {
                if in_shape[ax] != 1 {
                    o += idx[ax] * in_strides[ax];
                }
            }
            dst[o] += g;
            for ax in (0..rank).rev() {
                idx[ax] += 1;
                if idx[ax] < out_shape[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        Ok(vec![Some(out)])
    }
}

struct SumBackward {
    scale: f64,
}

impl<T: Scalar> Backward<T> for SumBackward {
    fn name(&self) -> &'static str {
        "sum"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let g = ctx.grad.data()[0] * T::of(self.scale);
        Ok(vec![Some(Tensor::full(ctx.inputs[0].shape().to_vec(), g)?)])
    }
}

struct ScaleBackward<T>(T);

impl<T: Scalar> Backward<T> for ScaleBackward<T> {
    fn name(&self) -> &'static str {
        "scale"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let c = self.0;
        Ok(vec![Some(ctx.grad.map(|g| g * c))])
    }
}

impl<T: Scalar> Tape<T> {
    /// Same-shape elementwise arithmetic; no implicit broadcasting.
    pub fn elementwise(&mut self, op: ElementwiseOp, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a)?, self.value(b)?);
        let out = match op {
            ElementwiseOp::Add => va.zip_map(vb, "add", |x, y| x + y)?,
            ElementwiseOp::Sub => va.zip_map(vb, "sub", |x, y| x - y)?,
            ElementwiseOp::Mul => va.zip_map(vb, "mul", |x, y| x * y)?,
        };
        let flops = out.numel() as u64;
        self.record(&[a, b], out, flops, ElementwiseBackward(op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(ElementwiseOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(ElementwiseOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(ElementwiseOp::Mul, a, b)
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x)?.map(gelu_scalar);
        let flops = GELU_FLOPS_PER_ELEMENT * out.numel() as u64;
        self.record(&[x], out, flops, GeluBackward)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x)?.reshape(shape.to_vec())?;
        self.record(&[x], out, 0, ReshapeBackward)
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let out = self.value(x)?.permute(axes)?;
        let mut inverse = vec![0; axes.len()];
        for (i, &a) in axes.iter().enumerate() {
            inverse[a] = i;
        }
        self.record(&[x], out, 0, PermuteBackward { inverse })
    }

    /// Explicit broadcast: each axis of `x` must be 1 or equal to `shape`'s.
    pub fn expand(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x)?;
        let in_shape = v.shape().to_vec();
        if in_shape.len() != shape.len()
            || in_shape.iter().zip(shape).any(|(&i, &o)| i != 1 && i != o)
        {
            return Err(Error::shape("expand", &in_shape, shape));
        }
        super::tensor::check_shape(shape)?;
        let in_strides = strides(&in_shape);
        let rank = shape.len();
        let n = numel(shape);
        let mut data = Vec::with_capacity(n);
        let mut idx = vec![0usize; rank];
        for _ in 0..n {
            let mut o = 0;
            for ax in 0..rank {
                if in_shape[ax] != 1 {
                    o += idx[ax] * in_strides[ax];
                }
            }
            data.push(v.data()[o]);
            for ax in (0..rank).rev() {
                idx[ax] += 1;
                if idx[ax] < shape[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        let out = Tensor::from_parts(shape.to_vec(), data);
        self.record(&[x], out, 0, ExpandBackward)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x)?;
        let n = v.numel() as u64;
        let out = Tensor::scalar(v.sum());
        self.record(&[x], out, n, SumBackward { scale: 1.0 })
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x)?;
        let n = v.numel();
        let out = Tensor::scalar(v.sum() / T::of(n as f64));
        self.record(&[x], out, n as u64, SumBackward { scale: 1.0 / n as f64 })
    }

    pub fn scale(&mut self, x: Var, c: T) -> Result<Var> {
        let out = self.value(x)?.map(|v| v * c);
        let flops = out.numel() as u64;
        self.record(&[x], out, flops, ScaleBackward(c))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::ParamSet;

    #[test]
    fn add_example() {
        let mut tape = Tape::<f32>::new();
        let a = tape.constant(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
        let b = tape.constant(Tensor::new(vec![2], vec![3.0, 4.0]).unwrap());
        let c = tape.add(a, b).unwrap();
        assert_eq!(tape.value(c).unwrap().data(), &[4.0, 6.0]);
    }

    #[test]
    fn mul_by_ones_is_identity() {
        let x = Tensor::<f32>::from_fn(vec![3, 4], |i| i as f32 * 0.37 - 1.0).unwrap();
        let mut tape = Tape::new();
        let a = tape.constant(x.clone());
        let b = tape.constant(x.ones_like());
        let c = tape.mul(a, b).unwrap();
        assert_eq!(tape.value(c).unwrap(), &x);
    }

    #[test]
    fn shape_mismatch_reports_both_shapes() {
        let mut tape = Tape::<f32>::new();
        let a = tape.constant(Tensor::zeros(vec![2, 3]).unwrap());
        let b = tape.constant(Tensor::zeros(vec![3, 2]).unwrap());
        let msg = tape.add(a, b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[3, 2]"), "{msg}");
    }

    #[test]
    fn gelu_fixed_points() {
        assert_eq!(gelu_scalar(0.0f64), 0.0);
        assert!((gelu_scalar(10.0f64) - 10.0).abs() < 1e-6);
    }

    #[test]
    fn linear_loss_gradient_is_input() {
        let x = Tensor::<f64>::new(vec![3], vec![0.5, -1.5, 2.0]).unwrap();
        let mut params = ParamSet::new();
        let w = params.add("w", Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap()).unwrap();
        let mut tape = Tape::new();
        let wv = tape.param(&params, w);
        let xv = tape.constant(x.clone());
        let prod = tape.mul(wv, xv).unwrap();
        let loss = tape.sum(prod).unwrap();
        tape.backward(loss, &mut params).unwrap();
        assert_eq!(params.get(w).grad, x);
        // second pass without zeroing doubles
        tape.backward(loss, &mut params).unwrap();
        assert_eq!(params.get(w).grad.data(), &[1.0, -3.0, 4.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_and_foreign() {
        let mut params = ParamSet::<f32>::new();
        let mut tape = Tape::new();
        let a = tape.input(Tensor::zeros(vec![2]).unwrap());
        assert!(matches!(tape.backward(a, &mut params), Err(Error::NotScalar(_))));
        let mut other = Tape::<f64>::new();
        let b = other.input(Tensor::zeros(vec![1]).unwrap());
        assert!(matches!(tape.backward(b, &mut params), Err(Error::ForeignVar)));
    }

    #[test]
    fn visit_order_is_reverse_of_recording() {
        let mut tape = Tape::<f64>::new();
        let a = tape.input(Tensor::full(vec![2, 2], 0.3).unwrap());
        let b = tape.gelu(a).unwrap();
        let c = tape.mul(b, a).unwrap();
        let d = tape.permute(c, &[1, 0]).unwrap();
        let e = tape.sum(d).unwrap();
        let g = tape.gradients(e).unwrap();
        let order = g.visit_order();
        assert_eq!(order.len(), 4);
        assert!(order.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn expand_sums_gradient() {
        let mut tape = Tape::<f64>::new();
        let a = tape.input(Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap());
        let b = tape.expand(a, &[3, 2]).unwrap();
        assert_eq!(tape.value(b).unwrap().data(), &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        let s = tape.sum(b).unwrap();
        let g = tape.gradients(s).unwrap();
        assert_eq!(g.get(a).unwrap().data(), &[3.0, 3.0]);
    }
}
