//! The DDCN encoder and its prediction head.
//!
//! `patch_embed → depth × EncoderBlock → patch_back`, mapping
//! `(B, T, C, H, W)` to the next frame `(B, C, H, W)`.

mod blocks;
mod config;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use blocks::{
    BlockActivations, EncoderBlock, FeedForward, SpatialAtt, SpatialAttBlock, StAttBlock, TemporalAtt,
};
pub use config::{ModelConfig, Variant};

use crate::error::{Error, Result};
use crate::numerics::{checkpoint, ParamSet, Scalar, Tape, Tensor, Var};
use crate::ops::{PatchBack, PatchEmbed};

/// Layer structure of a DDCN. Parameters live in a separate [`ParamSet`] so
/// the same structure can run in f32 and f64.
#[derive(Clone, Debug)]
pub struct Network {
    pub config: ModelConfig,
    pub embed: PatchEmbed,
    pub blocks: Vec<EncoderBlock>,
    pub head: PatchBack,
}

impl Network {
    pub fn build<T: Scalar>(config: &ModelConfig, params: &mut ParamSet<T>, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = config;
        let embed = PatchEmbed::new(params, "patch_embed", c.in_channels, c.embed_dim, c.patch_size, &mut rng)?;
        let mut blocks = Vec::with_capacity(c.depth);
        for i in 0..c.depth {
            let name = format!("encoder.{i}");
            blocks.push(EncoderBlock {
                st_att: StAttBlock::new(
                    params,
                    &format!("{name}.st_att"),
                    c.embed_dim,
                    c.involution_kernel,
                    c.groups,
                    c.reduction,
                    c.use_involution3d,
                    &mut rng,
                )?,
                spatial_att: SpatialAttBlock::new(
                    params,
                    &format!("{name}.spatial_att"),
                    c.embed_dim,
                    c.ddc_kernel,
                    c.groups,
                    c.use_ddc,
                    &mut rng,
                )?,
                ffn: FeedForward::new(params, &format!("{name}.ffn"), c.embed_dim, c.ffn_expansion, &mut rng)?,
            });
        }
        let head = PatchBack::new(
            params,
            "patch_back",
            c.input_steps,
            c.embed_dim,
            c.in_channels,
            c.patch_size,
            &mut rng,
        )?;
        Ok(Network {
            config: config.clone(),
            embed,
            blocks,
            head,
        })
    }

    /// Input shape for a given batch size.
    pub fn input_shape(&self, batch: usize) -> [usize; 5] {
        let c = &self.config;
        [batch, c.input_steps, c.in_channels, c.height, c.width]
    }

    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        let ok = shape.len() == 5 && shape[0] >= 1 && shape[1..] == self.input_shape(shape[0])[1..];
        if ok {
            Ok(())
        } else {
            Err(Error::shape("ddcn input", shape, &self.input_shape(1)))
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, params: &ParamSet<T>, x: Var) -> Result<Var> {
        self.forward_traced(tape, params, x, None)
    }

    pub fn forward_traced<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        params: &ParamSet<T>,
        x: Var,
        mut trace: Option<&mut Vec<BlockActivations<T>>>,
    ) -> Result<Var> {
        self.check_input(tape.value(x)?.shape())?;
        let mut h = self.embed.forward(tape, params, x)?;
        for block in &self.blocks {
            h = block.forward(tape, params, h, trace.as_deref_mut())?;
        }
        self.head.forward(tape, params, h)
    }
}

/// A network together with its parameters.
#[derive(Clone, Debug)]
pub struct Ddcn<T: Scalar = f32> {
    pub net: Network,
    pub params: ParamSet<T>,
}

impl<T: Scalar> Ddcn<T> {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut params = ParamSet::new();
        let net = Network::build(config, &mut params, seed)?;
        Ok(Ddcn { net, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.net.config
    }

    pub fn num_params(&self) -> usize {
        self.params.num_trainable()
    }

    pub fn forward(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        self.net.forward(tape, &self.params, x)
    }

    /// Inference without gradient tracking.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let v = tape.constant(x.clone());
        let y = self.forward(&mut tape, v)?;
        Ok(tape.value(y)?.clone())
    }

    /// Prediction plus the intermediates of every encoder block.
    pub fn predict_debug(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Vec<BlockActivations<T>>)> {
        let mut tape = Tape::new();
        let v = tape.constant(x.clone());
        let mut trace = Vec::new();
        let y = self.net.forward_traced(&mut tape, &self.params, v, Some(&mut trace))?;
        Ok((tape.value(y)?.clone(), trace))
    }

    pub fn cast<U: Scalar>(&self) -> Ddcn<U> {
        Ddcn {
            net: self.net.clone(),
            params: self.params.cast(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save_checkpoint(&self.params, path)
    }

    pub fn load_weights(&mut self, path: &Path) -> Result<()> {
        checkpoint::load_checkpoint(&mut self.params, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_grid_shapes() {
        for (h, w) in [(16, 8), (10, 20), (32, 32)] {
            for p in [1, 2] {
                let cfg = ModelConfig {
                    embed_dim: 8,
                    depth: 1,
                    patch_size: p,
                    ..Default::default()
                }
                .with_grid(h, w);
                let m = Ddcn::<f32>::new(&cfg, 0).unwrap();
                let x = Tensor::from_fn(vec![2, 4, 2, h, w], |i| (i % 7) as f32 * 0.1).unwrap();
                let y = m.predict(&x).unwrap();
                assert_eq!(y.shape(), &[2, 2, h, w]);
            }
        }
    }

    #[test]
    fn indivisible_grid_rejected_at_construction() {
        let cfg = ModelConfig::default().with_grid(10, 20);
        let cfg = ModelConfig { patch_size: 4, ..cfg };
        let err = Ddcn::<f32>::new(&cfg, 0).unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)));
    }

    #[test]
    fn wrong_input_shape_rejected() {
        let m = Ddcn::<f32>::new(&ModelConfig::tiny(), 0).unwrap();
        let x = Tensor::zeros(vec![1, 3, 2, 4, 4]).unwrap();
        assert!(m.predict(&x).is_err());
    }

    #[test]
    fn parameter_names_are_hierarchical() {
        let m = Ddcn::<f32>::new(&ModelConfig::tiny(), 0).unwrap();
        assert!(m.params.by_name("encoder.0.st_att.value_proj.weight").is_some());
        assert!(m.params.by_name("encoder.0.spatial_att.ddc.offset.weight").is_some());
        assert!(m.params.by_name("patch_back.proj.weight").is_some());
    }
}
