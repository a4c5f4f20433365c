//! Analytic parameter and FLOPs accounting.
//!
//! Conventions: a multiply-accumulate is 2 FLOPs; convolution costs
//! `2·out_positions·C_out·C_in·taps` with bias excluded; each deformable tap
//! costs one bilinear sample (8) plus one multiply-accumulate (2); GELU is 8
//! per element and add/multiply 1 per element; reshapes and permutes are free.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Ddcn, ModelConfig, Network, SpatialAtt, TemporalAtt};
use crate::numerics::{ParamSet, Scalar, GELU_FLOPS_PER_ELEMENT};
use crate::ops::{conv_flops, ddc_flops, involution_flops, Conv};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostKind {
    /// Static convolutions, including pointwise projections.
    Conv,
    /// Input-dependent aggregation (deformable or involution).
    Dynamic,
    Activation,
    Elementwise,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerCost {
    pub name: String,
    pub kind: CostKind,
    pub params: usize,
    pub flops: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub input_shape: Vec<usize>,
    pub convention: String,
    pub conv_only: bool,
    pub layers: Vec<LayerCost>,
    pub total_params: usize,
    pub total_flops: u64,
}

impl CostReport {
    fn new(input_shape: Vec<usize>, layers: Vec<LayerCost>, conv_only: bool) -> Self {
        let layers: Vec<LayerCost> = layers
            .into_iter()
            .filter(|l| !conv_only || matches!(l.kind, CostKind::Conv | CostKind::Dynamic))
            .collect();
        CostReport {
            input_shape,
            convention: "MAC = 2 FLOPs; bias excluded; GELU = 8 FLOPs/element".into(),
            conv_only,
            total_params: layers.iter().map(|l| l.params).sum(),
            total_flops: layers.iter().map(|l| l.flops).sum(),
            layers,
        }
    }

    pub fn to_table(&self) -> String {
        let width = self.layers.iter().map(|l| l.name.len()).max().unwrap_or(5).max(5);
        let mut s = format!(
            "input {:?}{}\n{:<width$}  {:>11}  {:>10}  {:>15}\n",
            self.input_shape,
            if self.conv_only { " (conv-only)" } else { "" },
            "layer",
            "kind",
            "params",
            "FLOPs"
        );
        for l in &self.layers {
            let kind = format!("{:?}", l.kind).to_lowercase();
            s.push_str(&format!("{:<width$}  {:>11}  {:>10}  {:>15}\n", l.name, kind, l.params, l.flops));
        }
        s.push_str(&format!(
            "{:<width$}  {:>11}  {:>10}  {:>15}\ntotal {:.4} M params, {:.4} G FLOPs ({})\n",
            "total",
            "",
            self.total_params,
            self.total_flops,
            self.total_params as f64 / 1e6,
            self.total_flops as f64 / 1e9,
            self.convention
        ));
        s
    }
}

/// Number of trainable scalars.
pub fn count_params<T: Scalar>(params: &ParamSet<T>) -> usize {
    params.num_trainable()
}

struct Ledger {
    rows: Vec<LayerCost>,
}

impl Ledger {
    fn push(&mut self, name: String, kind: CostKind, params: usize, flops: u64) {
        self.rows.push(LayerCost { name, kind, params, flops });
    }

    fn conv(&mut self, name: String, conv: &Conv, out_positions: usize) {
        let s = &conv.spec;
        self.push(
            name,
            CostKind::Conv,
            s.param_count(),
            conv_flops(out_positions, s.out_channels, s.in_channels, s.taps()),
        );
    }

    fn gelu(&mut self, name: String, elements: usize) {
        self.push(name, CostKind::Activation, 0, GELU_FLOPS_PER_ELEMENT * elements as u64);
    }

    fn elementwise(&mut self, name: String, elements: usize) {
        self.push(name, CostKind::Elementwise, 0, elements as u64);
    }
}

/// Per-layer cost of one forward pass of `net` on `input_shape`.
pub fn profile_network(net: &Network, input_shape: &[usize], conv_only: bool) -> Result<CostReport> {
    net.check_input(input_shape)?;
    let c = &net.config;
    let b = input_shape[0];
    let (h, w) = c.latent_grid();
    let frames = b * c.input_steps;
    let pos = frames * h * w;
    let d = c.embed_dim;
    let mut l = Ledger { rows: Vec::new() };

    l.conv("patch_embed.proj".into(), &net.embed.proj, pos);
    for (i, blk) in net.blocks.iter().enumerate() {
        let st = format!("encoder.{i}.st_att");
        l.conv(format!("{st}.value_proj"), &blk.st_att.value_proj, pos);
        l.conv(format!("{st}.gate_proj"), &blk.st_att.gate_proj, pos);
        l.gelu(format!("{st}.gelu"), pos * d);
        match &blk.st_att.att {
            TemporalAtt::Involution(inv) => {
                l.conv(format!("{st}.involution.reduce"), &inv.reduce, pos);
                l.gelu(format!("{st}.involution.gelu"), pos * inv.reduce.spec.out_channels);
                l.conv(format!("{st}.involution.span"), &inv.span, pos);
                l.push(
                    format!("{st}.involution.aggregate"),
                    CostKind::Dynamic,
                    inv.channels,
                    involution_flops(b, d, c.input_steps * h * w, inv.kernel.pow(3)),
                );
            }
            TemporalAtt::Static(sk) => l.push(
                format!("{st}.static_conv"),
                CostKind::Conv,
                sk.param_count(),
                involution_flops(b, d, c.input_steps * h * w, sk.taps()),
            ),
        }
        l.elementwise(format!("{st}.gate_mul"), pos * d);
        l.elementwise(format!("{st}.residual"), pos * d);

        let sp = format!("encoder.{i}.spatial_att");
        l.conv(format!("{sp}.value_proj"), &blk.spatial_att.value_proj, pos);
        l.conv(format!("{sp}.gate_proj"), &blk.spatial_att.gate_proj, pos);
        l.gelu(format!("{sp}.gelu"), pos * d);
        match &blk.spatial_att.att {
            SpatialAtt::Ddc(ddc) => {
                l.conv(format!("{sp}.ddc.offset"), &ddc.offset_branch, pos);
                l.conv(format!("{sp}.ddc.kernel"), &ddc.kernel_branch, pos);
                l.push(
                    format!("{sp}.ddc.sample"),
                    CostKind::Dynamic,
                    0,
                    ddc_flops(frames, d, h * w, ddc.kernel),
                );
            }
            SpatialAtt::Static(sk) => l.push(
                format!("{sp}.static_conv"),
                CostKind::Conv,
                sk.param_count(),
                involution_flops(frames, d, h * w, sk.taps()),
            ),
        }
        l.elementwise(format!("{sp}.gate_mul"), pos * d);
        l.elementwise(format!("{sp}.residual"), pos * d);

        let ff = format!("encoder.{i}.ffn");
        l.conv(format!("{ff}.expand"), &blk.ffn.expand, pos);
        l.conv(format!("{ff}.restore"), &blk.ffn.restore, pos);
        l.elementwise(format!("{ff}.residual"), pos * d);
    }
    l.conv("patch_back.proj".into(), &net.head.proj, b * h * w);
    Ok(CostReport::new(input_shape.to_vec(), l.rows, conv_only))
}

pub fn profile_model<T: Scalar>(model: &Ddcn<T>, input_shape: &[usize], conv_only: bool) -> Result<CostReport> {
    profile_network(&model.net, input_shape, conv_only)
}

/// FLOPs of one forward pass on `input_shape`.
pub fn count_flops<T: Scalar>(model: &Ddcn<T>, input_shape: &[usize]) -> Result<u64> {
    Ok(profile_model(model, input_shape, false)?.total_flops)
}

/// Cost of a freshly built network for `cfg` at the given batch size.
pub fn profile_config(cfg: &ModelConfig, batch: usize) -> Result<CostReport> {
    let mut params = ParamSet::<f32>::new();
    let net = Network::build(cfg, &mut params, 0)?;
    let report = profile_network(&net, &net.input_shape(batch), false)?;
    debug_assert_eq!(report.total_params, count_params(&params));
    Ok(report)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SearchSpace {
    pub embed_dims: Vec<usize>,
    pub depths: Vec<usize>,
    pub patches: Vec<usize>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            embed_dims: (1..=32).map(|k| 8 * k).collect(),
            depths: (1..=8).collect(),
            patches: vec![1, 2, 4, 8],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub embed_dim: usize,
    pub depth: usize,
    pub patch_size: usize,
    pub params: usize,
    pub flops: u64,
    pub params_ratio: f64,
    pub flops_ratio: f64,
}

impl SearchHit {
    pub fn within(&self, tolerance: f64) -> bool {
        (self.params_ratio - 1.0).abs() <= tolerance && (self.flops_ratio - 1.0).abs() <= tolerance
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SearchResult {
    pub target_params: usize,
    pub target_flops: u64,
    pub tolerance: f64,
    pub evaluated: usize,
    /// Configurations meeting both targets.
    pub matches: Vec<SearchHit>,
    /// Configurations meeting the parameter target only, closest FLOPs first.
    pub params_only: Vec<SearchHit>,
    /// For information: configurations that would meet both targets if
    /// FLOPs were read as multiply-accumulates (half the reported count).
    pub half_count_matches: Vec<SearchHit>,
}

/// Scans `(embed_dim, depth, patch_size)` around `base` for configurations
/// whose parameters and FLOPs (batch 1) are within `tolerance` of the targets.
pub fn search(
    base: &ModelConfig,
    space: &SearchSpace,
    target_params: usize,
    target_flops: u64,
    tolerance: f64,
) -> Result<SearchResult> {
    if target_params == 0 || target_flops == 0 {
        return Err(Error::InvalidConfig("search targets must be positive".into()));
    }
    let mut matches = Vec::new();
    let mut params_only = Vec::new();
    let mut half_count_matches = Vec::new();
    let mut evaluated = 0;
    for &p in &space.patches {
        for &depth in &space.depths {
            for &d in &space.embed_dims {
                let cfg = ModelConfig {
                    embed_dim: d,
                    depth,
                    patch_size: p,
                    ..base.clone()
                };
                if cfg.validate().is_err() {
                    continue;
                }
                evaluated += 1;
                let r = profile_config(&cfg, 1)?;
                let hit = SearchHit {
                    embed_dim: d,
                    depth,
                    patch_size: p,
                    params: r.total_params,
                    flops: r.total_flops,
                    params_ratio: r.total_params as f64 / target_params as f64,
                    flops_ratio: r.total_flops as f64 / target_flops as f64,
                };
                let half = SearchHit {
                    flops: hit.flops / 2,
                    flops_ratio: hit.flops_ratio / 2.0,
                    ..hit.clone()
                };
                if half.within(tolerance) {
                    half_count_matches.push(half);
                }
                if hit.within(tolerance) {
                    matches.push(hit);
                } else if (hit.params_ratio - 1.0).abs() <= tolerance {
                    params_only.push(hit);
                }
            }
        }
    }
    params_only.sort_by(|a, b| (a.flops_ratio - 1.0).abs().total_cmp(&(b.flops_ratio - 1.0).abs()));
    Ok(SearchResult {
        target_params,
        target_flops,
        tolerance,
        evaluated,
        matches,
        params_only,
        half_count_matches,
    })
}
