use rand::Rng;

use crate::error::Result;
use crate::numerics::{Scalar, Tensor};

/// Uniform in `[-1/√fan_in, 1/√fan_in)`.
pub fn uniform_fan_in<T: Scalar>(shape: Vec<usize>, fan_in: usize, rng: &mut impl Rng) -> Result<Tensor<T>> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape, |_| T::of(rng.gen_range(-bound..bound)))
}
