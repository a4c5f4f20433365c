//! Encoder building blocks. All take and return `(B, T, D, h, w)`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{ParamSet, Scalar, Tape, Tensor, Var};
use crate::ops::{Conv, ConvDims, ConvSpec, DdcLayer, Involution3d, StaticKernelConv};

fn check_5d<T: Scalar>(tape: &Tape<T>, x: Var, op: &'static str, dim: usize) -> Result<Vec<usize>> {
    let s = tape.value(x)?.shape().to_vec();
    if s.len() != 5 || s[2] != dim {
        return Err(Error::shape(op, &s, &[0, 0, dim, 0, 0]));
    }
    Ok(s)
}

/// Attention operator of the spatio-temporal block.
#[derive(Clone, Debug)]
pub enum TemporalAtt {
    Involution(Involution3d),
    Static(StaticKernelConv),
}

/// Attention operator of the spatial block.
#[derive(Clone, Debug)]
pub enum SpatialAtt {
    Ddc(DdcLayer),
    Static(StaticKernelConv),
}

/// Intermediates of one encoder block, kept in debug mode.
///
/// `v_st`/`att_st` are in the channel-first layout `(B, D, T, h, w)` used by
/// the 3D operators, `v_s`/`att_s` in the folded layout `(B·T, D, h, w)`; the
/// remaining tensors are `(B, T, D, h, w)`.
#[derive(Clone, Debug)]
pub struct BlockActivations<T: Scalar> {
    pub x_st: Tensor<T>,
    pub v_st: Tensor<T>,
    pub att_st: Tensor<T>,
    pub x_s: Tensor<T>,
    pub v_s: Tensor<T>,
    pub att_s: Tensor<T>,
    pub enc_out: Tensor<T>,
    pub dec_out: Tensor<T>,
}

/// `V_ST ⊗ Att_ST` with `V_ST = PW3D(x)` and `Att_ST = Inv3D(σ(PW3D(x)))`.
#[derive(Clone, Debug)]
pub struct StAttBlock {
    pub dim: usize,
    pub value_proj: Conv,
    pub gate_proj: Conv,
    pub att: TemporalAtt,
}

impl StAttBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        params: &mut ParamSet<T>,
        name: &str,
        dim: usize,
        kernel: usize,
        groups: usize,
        reduction: usize,
        dynamic: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let pw = ConvSpec::pointwise(dim, dim, ConvDims::Three);
        let value_proj = Conv::new(params, &format!("{name}.value_proj"), pw, rng)?;
        let gate_proj = Conv::new(params, &format!("{name}.gate_proj"), pw, rng)?;
        let att = if dynamic {
            TemporalAtt::Involution(Involution3d::new(
                params,
                &format!("{name}.involution"),
                dim,
                kernel,
                groups,
                reduction,
                rng,
            )?)
        } else {
            TemporalAtt::Static(StaticKernelConv::new(
                params,
                &format!("{name}.static_conv"),
                dim,
                kernel,
                groups,
                ConvDims::Three,
                true,
                rng,
            )?)
        };
        Ok(StAttBlock {
            dim,
            value_proj,
            gate_proj,
            att,
        })
    }

    pub fn param_count(&self) -> usize {
        self.value_proj.spec.param_count()
            + self.gate_proj.spec.param_count()
            + match &self.att {
                TemporalAtt::Involution(i) => i.param_count(),
                TemporalAtt::Static(s) => s.param_count(),
            }
    }

    /// Returns `(output, V_ST, Att_ST)`.
    pub fn forward_parts<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        params: &ParamSet<T>,
        x: Var,
    ) -> Result<(Var, Var, Var)> {
        check_5d(tape, x, "st_att_block", self.dim)?;
        let cf = tape.permute(x, &[0, 2, 1, 3, 4])?;
        let v = self.value_proj.forward(tape, params, cf)?;
        let g = self.gate_proj.forward(tape, params, cf)?;
        let g = tape.gelu(g)?;
        let att = match &self.att {
            TemporalAtt::Involution(i) => i.forward(tape, params, g)?,
            TemporalAtt::Static(s) => s.forward(tape, params, g)?,
        };
        let y = tape.mul(v, att)?;
        let out = tape.permute(y, &[0, 2, 1, 3, 4])?;
        Ok((out, v, att))
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, params: &ParamSet<T>, x: Var) -> Result<Var> {
        Ok(self.forward_parts(tape, params, x)?.0)
    }
}

/// `V_S ⊗ Att_S` on frames folded into the batch, with `V_S = PW(x)` and
/// `Att_S = DDC(σ(PW(x)))`.
#[derive(Clone, Debug)]
pub struct SpatialAttBlock {
    pub dim: usize,
    pub value_proj: Conv,
    pub gate_proj: Conv,
    pub att: SpatialAtt,
}

impl SpatialAttBlock {
    pub fn new<T: Scalar>(
        params: &mut ParamSet<T>,
        name: &str,
        dim: usize,
        kernel: usize,
        groups: usize,
        dynamic: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let pw = ConvSpec::pointwise(dim, dim, ConvDims::Two);
        let value_proj = Conv::new(params, &format!("{name}.value_proj"), pw, rng)?;
        let gate_proj = Conv::new(params, &format!("{name}.gate_proj"), pw, rng)?;
        let att = if dynamic {
            SpatialAtt::Ddc(DdcLayer::new(params, &format!("{name}.ddc"), dim, kernel, groups, rng)?)
        } else {
            SpatialAtt::Static(StaticKernelConv::new(
                params,
                &format!("{name}.static_conv"),
                dim,
                kernel,
                groups,
                ConvDims::Two,
                false,
                rng,
            )?)
        };
        Ok(SpatialAttBlock {
            dim,
            value_proj,
            gate_proj,
            att,
        })
    }

    pub fn param_count(&self) -> usize {
        self.value_proj.spec.param_count()
            + self.gate_proj.spec.param_count()
            + match &self.att {
                SpatialAtt::Ddc(d) => d.param_count(),
                SpatialAtt::Static(s) => s.param_count(),
            }
    }

    /// Returns `(output, V_S, Att_S)`.
    pub fn forward_parts<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        params: &ParamSet<T>,
        x: Var,
    ) -> Result<(Var, Var, Var)> {
        let s = check_5d(tape, x, "spatial_att_block", self.dim)?;
        let folded = tape.reshape(x, &[s[0] * s[1], s[2], s[3], s[4]])?;
        let v = self.value_proj.forward(tape, params, folded)?;
        let g = self.gate_proj.forward(tape, params, folded)?;
        let g = tape.gelu(g)?;
        let att = match &self.att {
            SpatialAtt::Ddc(d) => d.forward(tape, params, g)?,
            SpatialAtt::Static(st) => st.forward(tape, params, g)?,
        };
        let y = tape.mul(v, att)?;
        let out = tape.reshape(y, &s)?;
        Ok((out, v, att))
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, params: &ParamSet<T>, x: Var) -> Result<Var> {
        Ok(self.forward_parts(tape, params, x)?.0)
    }
}

/// Two pointwise projections, `D → e·D → D`, with no activation between them.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub dim: usize,
    pub expand: Conv,
    pub restore: Conv,
}

impl FeedForward {
    pub fn new<T: Scalar>(
        params: &mut ParamSet<T>,
        name: &str,
        dim: usize,
        expansion: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let hidden = dim * expansion;
        Ok(FeedForward {
            dim,
            expand: Conv::new(
                params,
                &format!("{name}.expand"),
                ConvSpec::pointwise(dim, hidden, ConvDims::Two),
                rng,
            )?,
            restore: Conv::new(
                params,
                &format!("{name}.restore"),
                ConvSpec::pointwise(hidden, dim, ConvDims::Two),
                rng,
            )?,
        })
    }

    pub fn param_count(&self) -> usize {
        self.expand.spec.param_count() + self.restore.spec.param_count()
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, params: &ParamSet<T>, x: Var) -> Result<Var> {
        let s = check_5d(tape, x, "feed_forward", self.dim)?;
        let folded = tape.reshape(x, &[s[0] * s[1], s[2], s[3], s[4]])?;
        let h = self.expand.forward(tape, params, folded)?;
        let y = self.restore.forward(tape, params, h)?;
        tape.reshape(y, &s)
    }
}

/// One encoder stage with its residual connections.
#[derive(Clone, Debug)]
pub struct EncoderBlock {
    pub st_att: StAttBlock,
    pub spatial_att: SpatialAttBlock,
    pub ffn: FeedForward,
}

impl EncoderBlock {
    pub fn param_count(&self) -> usize {
        self.st_att.param_count() + self.spatial_att.param_count() + self.ffn.param_count()
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        params: &ParamSet<T>,
        x_st: Var,
        trace: Option<&mut Vec<BlockActivations<T>>>,
    ) -> Result<Var> {
        let (st, v_st, att_st) = self.st_att.forward_parts(tape, params, x_st)?;
        let x_s = tape.add(st, x_st)?;
        let (sp, v_s, att_s) = self.spatial_att.forward_parts(tape, params, x_s)?;
        let enc = tape.add(sp, x_s)?;
        let ff = self.ffn.forward(tape, params, enc)?;
        let dec = tape.add(ff, enc)?;
        if let Some(trace) = trace {
            let get = |v: Var| tape.value(v).cloned();
            trace.push(BlockActivations {
                x_st: get(x_st)?,
                v_st: get(v_st)?,
                att_st: get(att_st)?,
                x_s: get(x_s)?,
                v_s: get(v_s)?,
                att_s: get(att_s)?,
                enc_out: get(enc)?,
                dec_out: get(dec)?,
            });
        }
        Ok(dec)
    }
}
