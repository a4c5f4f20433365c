//! Patch embedding and its inverse.

use rand::Rng;

use super::conv::{Conv, ConvDims, ConvSpec};
use crate::error::{Error, Result};
use crate::numerics::{ParamSet, Scalar, Tape, Tensor, Var};

/// Projects each non-overlapping p×p patch of every frame from `C·p²` values
/// to `D` channels: `(B,T,C,H,W) → (B,T,D,H/p,W/p)`.
#[derive(Clone, Debug)]
pub struct PatchEmbed {
    pub patch: usize,
    pub proj: Conv,
}

impl PatchEmbed {
    pub fn new<T: Scalar>(
        params: &mut ParamSet<T>,
        name: &str,
        in_channels: usize,
        embed_dim: usize,
        patch: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if patch == 0 {
            return Err(Error::InvalidConfig("patch size must be ≥ 1".into()));
        }
        let spec = ConvSpec {
            in_channels,
            out_channels: embed_dim,
            kernel: patch,
            stride: patch,
            padding: 0,
            dims: ConvDims::Two,
            bias: true,
        };
        Ok(PatchEmbed {
            patch,
            proj: Conv::new(params, &format!("{name}.proj"), spec, rng)?,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, params: &ParamSet<T>, x: Var) -> Result<Var> {
        let s = tape.value(x)?.shape().to_vec();
        if s.len() != 5 {
            return Err(Error::InvalidShape(format!(
                "patch_embed expects (B,T,C,H,W), got {s:?}"
            )));
        }
        check_divisible(s[3], s[4], self.patch)?;
        let frames = tape.reshape(x, &[s[0] * s[1], s[2], s[3], s[4]])?;
        let y = self.proj.forward(tape, params, frames)?;
        let d = self.proj.spec.out_channels;
        tape.reshape(y, &[s[0], s[1], d, s[3] / self.patch, s[4] / self.patch])
    }
}

pub fn check_divisible(h: usize, w: usize, patch: usize) -> Result<()> {
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(Error::InvalidShape(format!(
            "grid {h}×{w} is not divisible by patch size {patch}; H and W must be multiples of {patch}"
        )));
    }
    Ok(())
}

/// Restores full resolution: `(B,T,D,h,w) → (B,C,h·p,w·p)`.
///
/// Time is folded into channels (`T·D`), projected pointwise to `C·p²`, and
/// the `p²` factor is moved onto the spatial axes by sub-pixel rearrangement.
#[derive(Clone, Debug)]
pub struct PatchBack {
    pub patch: usize,
    pub steps: usize,
    pub embed_dim: usize,
    pub out_channels: usize,
    pub proj: Conv,
}

impl PatchBack {
    pub fn new<T: Scalar>(
        params: &mut ParamSet<T>,
        name: &str,
        steps: usize,
        embed_dim: usize,
        out_channels: usize,
        patch: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if patch == 0 {
            return Err(Error::InvalidConfig("patch size must be ≥ 1".into()));
        }
        let spec = ConvSpec::pointwise(steps * embed_dim, out_channels * patch * patch, ConvDims::Two);
        Ok(PatchBack {
            patch,
            steps,
            embed_dim,
            out_channels,
            proj: Conv::new(params, &format!("{name}.proj"), spec, rng)?,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, params: &ParamSet<T>, x: Var) -> Result<Var> {
        let s = tape.value(x)?.shape().to_vec();
        if s.len() != 5 || s[1] != self.steps || s[2] != self.embed_dim {
            return Err(Error::shape(
                "patch_back",
                &s,
                &[0, self.steps, self.embed_dim, 0, 0],
            ));
        }
        let folded = tape.reshape(x, &[s[0], s[1] * s[2], s[3], s[4]])?;
        let y = self.proj.forward(tape, params, folded)?;
        pixel_shuffle(tape, y, self.patch)
    }
}

/// `(B, C·p², h, w) → (B, C, h·p, w·p)` with
/// `out[b, c, y·p+i, x·p+j] = in[b, c·p²+i·p+j, y, x]`.
pub fn pixel_shuffle<T: Scalar>(tape: &mut Tape<T>, x: Var, p: usize) -> Result<Var> {
    let s = tape.value(x)?.shape().to_vec();
    if s.len() != 4 || p == 0 || s[1] % (p * p) != 0 {
        return Err(Error::InvalidShape(format!(
            "pixel_shuffle: {s:?} has no channel factor {}",
            p * p
        )));
    }
    let c = s[1] / (p * p);
    let split = tape.reshape(x, &[s[0], c, p, p, s[2], s[3]])?;
    let moved = tape.permute(split, &[0, 1, 4, 2, 5, 3])?;
    tape.reshape(moved, &[s[0], c, s[2] * p, s[3] * p])
}

/// Non-differentiable version of [`pixel_shuffle`].
pub fn pixel_shuffle_tensor<T: Scalar>(x: &Tensor<T>, p: usize) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let v = tape.constant(x.clone());
    let y = pixel_shuffle(&mut tape, v, p)?;
    Ok(tape.value(y)?.clone())
}
