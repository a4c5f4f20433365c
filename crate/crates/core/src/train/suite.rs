//! Randomized gradient-check suites over every operator and the full network.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::gradcheck::{gradcheck, random_tensor, randomize_params, weighted_sum, GradCheckConfig, GradCheckReport};
use crate::error::Result;
use crate::model::{Ddcn, ModelConfig};
use crate::numerics::{ElementwiseOp, ParamSet, Tensor};
use crate::ops::{ConvDims, DdcLayer, Involution3d, PatchBack, PatchEmbed, StaticKernelConv};

#[derive(Clone, Debug, Serialize)]
pub struct CaseSummary {
    pub name: String,
    pub instances: usize,
    pub max_rel_error: f64,
    pub refined: usize,
    pub passed: bool,
    pub worst: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub tolerance: f64,
    pub cases: Vec<CaseSummary>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.cases.iter().all(|c| c.passed)
    }

    pub fn case(&self, name: &str) -> Option<&CaseSummary> {
        self.cases.iter().find(|c| c.name == name)
    }
}

type Case = fn(&mut ChaCha8Rng, &GradCheckConfig) -> Result<GradCheckReport>;

fn summarize(name: &str, instances: usize, seed: u64, cfg: &GradCheckConfig, case: Case) -> Result<CaseSummary> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = CaseSummary {
        name: name.to_string(),
        instances,
        max_rel_error: 0.0,
        refined: 0,
        passed: true,
        worst: None,
    };
    for _ in 0..instances {
        let r = case(&mut rng, cfg)?;
        out.refined += r.checks.iter().map(|c| c.refined).sum::<usize>();
        out.passed &= r.passed();
        if let Some(w) = r.worst() {
            if w.max_rel_error >= out.max_rel_error {
                out.max_rel_error = w.max_rel_error;
                out.worst = Some(format!(
                    "{}[{}]: analytic {:.6e}, numeric {:.6e}",
                    w.name, w.worst_index, w.analytic, w.numeric
                ));
            }
        }
    }
    Ok(out)
}

fn input(name: &str, t: Tensor<f64>) -> (String, Tensor<f64>) {
    (name.to_string(), t)
}

fn dims(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    rng.gen_range(lo..=hi)
}

fn elementwise_case(rng: &mut ChaCha8Rng, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let shape = [dims(rng, 1, 3), dims(rng, 1, 4)];
    let a = random_tensor(&shape, -2.0, 2.0, rng)?;
    let b = random_tensor(&shape, -2.0, 2.0, rng)?;
    let op = [ElementwiseOp::Add, ElementwiseOp::Sub, ElementwiseOp::Mul][rng.gen_range(0..3)];
    let seed = rng.gen();
    gradcheck("elementwise", &mut ParamSet::new(), &[input("a", a), input("b", b)], cfg, |t, _, v| {
        let y = t.elementwise(op, v[0], v[1])?;
        weighted_sum(t, y, seed)
    })
}

fn gelu_case(rng: &mut ChaCha8Rng, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let x = random_tensor(&[dims(rng, 1, 4), dims(rng, 1, 5)], -2.0, 2.0, rng)?;
    let seed = rng.gen();
    gradcheck("gelu", &mut ParamSet::new(), &[input("x", x)], cfg, |t, _, v| {
        let y = t.gelu(v[0])?;
        weighted_sum(t, y, seed)
    })
}

fn l1_case(rng: &mut ChaCha8Rng, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let shape = [dims(rng, 1, 4), dims(rng, 1, 5)];
    let p = random_tensor(&shape, -2.0, 2.0, rng)?;
    let y = random_tensor(&shape, -2.0, 2.0, rng)?;
    gradcheck("l1_loss", &mut ParamSet::new(), &[input("pred", p), input("target", y)], cfg, |t, _, v| {
        t.l1_loss(v[0], v[1])
    })
}

fn pointwise_case(rng: &mut ChaCha8Rng, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let three = rng.gen_bool(0.5);
    let (cin, cout) = (dims(rng, 1, 4), dims(rng, 1, 4));
    let mut shape = vec![dims(rng, 1, 2), cin, dims(rng, 1, 3), dims(rng, 1, 3)];
    if three {
        shape.push(dims(rng, 1, 3));
    }
    let x = random_tensor(&shape, -2.0, 2.0, rng)?;
    let w = random_tensor(&[cout, cin], -2.0, 2.0, rng)?;
    let b = random_tensor(&[cout], -2.0, 2.0, rng)?;
    let seed = rng.gen();
    gradcheck(
        "pointwise_conv",
        &mut ParamSet::new(),
        &[input("x", x), input("weight", w), input("bias", b)],
        cfg,
        |t, _, v| {
            let y = t.pointwise_conv(v[0], v[1], Some(v[2]))?;
            weighted_sum(t, y, seed)
        },
    )
}

fn conv_case(rng: &mut ChaCha8Rng, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let three = rng.gen_bool(0.3);
    let k = [1, 3][rng.gen_range(0..2)];
    let stride = if three { 1 } else { dims(rng, 1, 2) };
    let (cin, cout) = (dims(rng, 1, 3), dims(rng, 1, 3));
    let mut shape = vec![dims(rng, 1, 2), cin];
    let mut wshape = vec![cout, cin];
    for _ in 0..if three { 3 } else { 2 } {
        shape.push(dims(rng, 2, 4));
        wshape.push(k);
    }
    let x = random_tensor(&shape, -2.0, 2.0, rng)?;
    let w = random_tensor(&wshape, -2.0, 2.0, rng)?;
    let b = random_tensor(&[cout], -2.0, 2.0, rng)?;
    let seed = rng.gen();
    gradcheck(
        "standard_conv",
        &mut ParamSet::new(),
        &[input("x", x), input("weight", w), input("bias", b)],
        cfg,
        |t, _, v| {
            let y = t.conv(v[0], v[1], Some(v[2]), stride, (k - 1) / 2)?;
            weighted_sum(t, y, seed)
        },
    )
}

fn bilinear_case(rng: &mut ChaCha8Rng, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let (h, w) = (dims(rng, 2, 4), dims(rng, 2, 4));
    let n = dims(rng, 1, 2);
    let x = random_tensor(&[n, dims(rng, 1, 2), h, w], -2.0, 2.0, rng)?;
    let np = dims(rng, 1, 5);
    // points may leave the grid by up to one cell
    let pts = Tensor::from_fn(vec![n, np, 2], |i| {
        let extent = if i % 2 == 0 { h } else { w } as f64;
        rng.gen_range(-1.0..extent)
    })?;
    let seed = rng.gen();
    gradcheck("bilinear", &mut ParamSet::new(), &[input("x", x), input("points", pts)], cfg, |t, _, v| {
        let y = t.sample_points(v[0], v[1])?;
        weighted_sum(t, y, seed)
    })
}

fn ddc_op_case(rng: &mut ChaCha8Rng, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let k = [1, 3][rng.gen_range(0..2)];
    let g = dims(rng, 1, 2);
    let c = g * dims(rng, 1, 2);
    let (n, h, w) = (dims(rng, 1, 2), dims(rng, 2, 5), dims(rng, 2, 5));
    let x = random_tensor(&[n, c, h, w], -2.0, 2.0, rng)?;
    let off = random_tensor(&[n, 2 * k * k, h, w], -1.0, 1.0, rng)?;
    let ker = random_tensor(&[n, g, k * k, h, w], -2.0, 2.0, rng)?;
    let seed = rng.gen();
    gradcheck(
        "ddc",
        &mut ParamSet::new(),
        &[input("x", x), input("offsets", off), input("kernels", ker)],
        cfg,
        |t, _, v| {
            let y = t.ddc(v[0], v[1], v[2], k)?;
            weighted_sum(t, y, seed)
        },
    )
}

fn ddc_layer_case(rng: &mut ChaCha8Rng, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut params = ParamSet::new();
    let layer = DdcLayer::new(&mut params, "ddc", 2, 3, 1, rng)?;
    randomize_params(&mut params, 0.5, rng);
    let x = random_tensor(&[1, 2, 4, 4], -2.0, 2.0, rng)?;
    let seed = rng.gen();
    gradcheck("ddc_layer", &mut params, &[input("x", x)], cfg, |t, p, v| {
        let y = layer.forward(t, p, v[0])?;
        weighted_sum(t, y, seed)
    })
}

fn involution_case(rng: &mut ChaCha8Rng, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut params = ParamSet::new();
    let groups = dims(rng, 1, 2);
    let layer = Involution3d::new(&mut params, "inv", 4, 3, groups, 2, rng)?;
    randomize_params(&mut params, 0.7, rng);
    let x = random_tensor(&[1, 4, dims(rng, 1, 3), dims(rng, 2, 4), dims(rng, 2, 4)], -2.0, 2.0, rng)?;
    let seed = rng.gen();
    gradcheck("involution3d", &mut params, &[input("x", x)], cfg, |t, p, v| {
        let y = layer.forward(t, p, v[0])?;
        weighted_sum(t, y, seed)
    })
}

fn static_conv_case(rng: &mut ChaCha8Rng, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut params = ParamSet::new();
    let three = rng.gen_bool(0.5);
    let dims_kind = if three { ConvDims::Three } else { ConvDims::Two };
    let layer = StaticKernelConv::new(&mut params, "sc", 4, 3, 2, dims_kind, three, rng)?;
    randomize_params(&mut params, 0.7, rng);
    let mut shape = vec![dims(rng, 1, 2), 4, dims(rng, 2, 3), dims(rng, 2, 4)];
    if three {
        shape.push(dims(rng, 2, 3));
    }
    let x = random_tensor(&shape, -2.0, 2.0, rng)?;
    let seed = rng.gen();
    gradcheck("static_kernel_conv", &mut params, &[input("x", x)], cfg, |t, p, v| {
        let y = layer.forward(t, p, v[0])?;
        weighted_sum(t, y, seed)
    })
}

fn patch_case(rng: &mut ChaCha8Rng, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut params = ParamSet::new();
    let p = dims(rng, 1, 2);
    let embed = PatchEmbed::new(&mut params, "embed", 2, 3, p, rng)?;
    let back = PatchBack::new(&mut params, "back", 2, 3, 2, p, rng)?;
    randomize_params(&mut params, 0.7, rng);
    let x = random_tensor(&[1, 2, 2, 2 * p, 2 * p], -2.0, 2.0, rng)?;
    let seed = rng.gen();
    gradcheck("patch_embed_back", &mut params, &[input("x", x)], cfg, |t, ps, v| {
        let e = embed.forward(t, ps, v[0])?;
        let y = back.forward(t, ps, e)?;
        weighted_sum(t, y, seed)
    })
}

fn tiny_model_case(rng: &mut ChaCha8Rng, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mcfg = ModelConfig {
        in_channels: rng.gen_range(1..=2),
        ..ModelConfig::tiny()
    };
    let mut model = Ddcn::<f64>::new(&mcfg, rng.gen())?;
    randomize_params(&mut model.params, 0.5, rng);
    let net = model.net.clone();
    let x = random_tensor(&net.input_shape(1), -2.0, 2.0, rng)?;
    let y = random_tensor(&[1, mcfg.in_channels, mcfg.height, mcfg.width], -2.0, 2.0, rng)?;
    gradcheck("ddcn_tiny", &mut model.params, &[input("x", x)], cfg, |t, p, v| {
        let pred = net.forward(t, p, v[0])?;
        let target = t.constant(y.clone());
        t.l1_loss(pred, target)
    })
}

const OP_CASES: [(&str, Case); 11] = [
    ("elementwise", elementwise_case),
    ("gelu", gelu_case),
    ("l1_loss", l1_case),
    ("pointwise_conv", pointwise_case),
    ("standard_conv", conv_case),
    ("bilinear", bilinear_case),
    ("ddc", ddc_op_case),
    ("ddc_layer", ddc_layer_case),
    ("involution3d", involution_case),
    ("static_kernel_conv", static_conv_case),
    ("patch_embed_back", patch_case),
];

/// All operator cases, `instances` random draws each.
pub fn ops_suite(instances: usize, seed: u64, cfg: &GradCheckConfig) -> Result<SuiteReport> {
    let cases = OP_CASES
        .iter()
        .enumerate()
        .map(|(i, (name, case))| summarize(name, instances, seed.wrapping_add(i as u64), cfg, *case))
        .collect::<Result<_>>()?;
    Ok(SuiteReport {
        tolerance: cfg.tolerance,
        cases,
    })
}

/// The tiny end-to-end network under an L1 loss, every parameter and the input.
pub fn model_suite(instances: usize, seed: u64, cfg: &GradCheckConfig) -> Result<SuiteReport> {
    Ok(SuiteReport {
        tolerance: cfg.tolerance,
        cases: vec![summarize("ddcn_tiny", instances, seed, cfg, tiny_model_case)?],
    })
}

/// Names of the operator cases, in suite order.
pub fn op_case_names() -> Vec<&'static str> {
    OP_CASES.iter().map(|(n, _)| *n).collect()
}
