use crate::error::{Error, Result};
use crate::numerics::{Backward, BackwardCtx, Scalar, Tape, Tensor, Var};

struct L1Backward;

impl<T: Scalar> Backward<T> for L1Backward {
    fn name(&self) -> &'static str {
        "l1_loss"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let (pred, target) = (ctx.inputs[0], ctx.inputs[1]);
        let scale = ctx.grad.data()[0] / T::of(pred.numel() as f64);
        // subgradient 0 at ties
        let sign = |d: T| {
            if d > T::zero() {
                scale
            } else if d < T::zero() {
                -scale
            } else {
                T::zero()
            }
        };
        let dp = pred.zip_map(target, "l1_loss", |p, t| sign(p - t))?;
        let dt = ctx.needs[1].then(|| dp.map(|v| -v));
        Ok(vec![Some(dp), dt])
    }
}

impl<T: Scalar> Tape<T> {
    /// Mean absolute difference over all elements.
    pub fn l1_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (p, t) = (self.value(pred)?, self.value(target)?);
        if p.shape() != t.shape() {
            return Err(Error::shape("l1_loss", p.shape(), t.shape()));
        }
        let mut acc = T::zero();
        for (&a, &b) in p.data().iter().zip(t.data()) {
            acc += (a - b).abs();
        }
        let n = p.numel();
        let out = Tensor::scalar(acc / T::of(n as f64));
        self.record(&[pred, target], out, 3 * n as u64, L1Backward)
    }
}

/// Mean absolute difference without recording.
pub fn l1_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<T> {
    let mut tape = Tape::new();
    let (p, t) = (tape.constant(pred.clone()), tape.constant(target.clone()));
    let l = tape.l1_loss(p, t)?;
    tape.value(l)?.item()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let a = Tensor::<f64>::from_fn(vec![2, 3], |i| i as f64).unwrap();
        assert_eq!(l1_loss(&a, &a).unwrap(), 0.0);
        let p = Tensor::new(vec![1], vec![2.0f64]).unwrap();
        let t = Tensor::new(vec![1], vec![0.0f64]).unwrap();
        assert_eq!(l1_loss(&p, &t).unwrap(), 2.0);
        let t2 = Tensor::<f64>::zeros(vec![2]).unwrap();
        assert!(l1_loss(&p, &t2).is_err());
    }

    #[test]
    fn tie_has_zero_subgradient() {
        let mut tape = Tape::<f64>::new();
        let p = tape.input(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
        let t = tape.constant(Tensor::new(vec![3], vec![1.0, 0.0, 5.0]).unwrap());
        let l = tape.l1_loss(p, t).unwrap();
        let g = tape.gradients(l).unwrap();
        assert_eq!(g.get(p).unwrap().data(), &[0.0, 1.0 / 3.0, -1.0 / 3.0]);
    }
}
