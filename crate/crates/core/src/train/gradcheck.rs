//! Finite-difference gradient checking in f64.
//!
//! Each element is perturbed by ±h and the central difference is compared
//! with the analytic gradient. Bilinear sampling is only piecewise smooth, so
//! a perturbation can step across a lattice line and bend the difference
//! quotient. When the central estimate disagrees by more than a tenth of the
//! tolerance, the harness retries with one-sided Richardson-extrapolated
//! differences (at h and h/10) and a central difference at h/10, keeping the
//! closest. Such retries are counted in the report.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::numerics::{ParamSet, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tolerance: f64,
    /// Lower bound on the denominator of the relative error.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-4,
            tolerance: 1e-4,
            floor: 1e-3,
        }
    }
}

impl GradCheckConfig {
    pub fn with_tolerance(tolerance: f64) -> Self {
        GradCheckConfig {
            tolerance,
            ..Default::default()
        }
    }

    pub fn relative_error(&self, analytic: f64, numeric: f64) -> f64 {
        (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(self.floor)
    }
}

/// Worst element of one checked tensor.
#[derive(Clone, Debug, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub elements: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    /// Elements whose central estimate was replaced by a closer kink-retry estimate.
    pub refined: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub label: String,
    pub tolerance: f64,
    pub checks: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.checks.iter().map(|c| c.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.max_rel_error < self.tolerance)
    }

    pub fn worst(&self) -> Option<&TensorCheck> {
        self.checks
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }

    pub fn merge(&mut self, other: GradCheckReport) {
        self.checks.extend(other.checks);
    }
}

/// Checks gradients of a scalar function of `params` and `inputs` against
/// finite differences. `f` builds the loss on a fresh tape; parameter values
/// are restored afterwards.
pub fn gradcheck<F>(
    label: &str,
    params: &mut ParamSet<f64>,
    inputs: &[(String, Tensor<f64>)],
    cfg: &GradCheckConfig,
    f: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &ParamSet<f64>, &[Var]) -> Result<Var>,
{
    // analytic
    params.zero_grad();
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|(_, t)| tape.input(t.clone())).collect();
    let loss = f(&mut tape, params, &vars)?;
    let grads = tape.backward(loss, params)?;
    let input_grads: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, (_, t))| grads.get(v).cloned().unwrap_or_else(|| t.zeros_like()))
        .collect();
    drop(tape);

    let eval = |params: &ParamSet<f64>, inputs: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let loss = f(&mut tape, params, &vars)?;
        tape.value(loss)?.item()
    };

    let mut checks = Vec::new();
    let mut current: Vec<Tensor<f64>> = inputs.iter().map(|(_, t)| t.clone()).collect();

    for (i, (name, _)) in inputs.iter().enumerate() {
        let analytic = input_grads[i].clone();
        let check = check_tensor(name, &analytic, cfg, |j, delta| {
            let orig = current[i].data()[j];
            current[i].data_mut()[j] = orig + delta;
            let v = eval(params, &current);
            current[i].data_mut()[j] = orig;
            v
        })?;
        checks.push(check);
    }

    let ids: Vec<_> = (0..params.len())
        .filter(|&k| params.iter().nth(k).is_some_and(|p| p.trainable))
        .collect();
    for k in ids {
        let (name, analytic) = {
            let p = params.iter().nth(k).expect("index in range");
            (p.name.clone(), p.grad.clone())
        };
        let check = check_tensor(&name, &analytic, cfg, |j, delta| {
            let p = params.iter_mut().nth(k).expect("index in range");
            let orig = p.value.data()[j];
            p.value.data_mut()[j] = orig + delta;
            let v = eval(params, &current);
            params.iter_mut().nth(k).expect("index in range").value.data_mut()[j] = orig;
            v
        })?;
        checks.push(check);
    }
    params.zero_grad();

    Ok(GradCheckReport {
        label: label.to_string(),
        tolerance: cfg.tolerance,
        checks,
    })
}

fn check_tensor(
    name: &str,
    analytic: &Tensor<f64>,
    cfg: &GradCheckConfig,
    mut eval_at: impl FnMut(usize, f64) -> Result<f64>,
) -> Result<TensorCheck> {
    let h = cfg.step;
    let mut out = TensorCheck {
        name: name.to_string(),
        elements: analytic.numel(),
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        refined: 0,
    };
    for (j, &a) in analytic.data().iter().enumerate() {
        let plus = eval_at(j, h)?;
        let minus = eval_at(j, -h)?;
        let mut numeric = (plus - minus) / (2.0 * h);
        let mut err = cfg.relative_error(a, numeric);
        if err >= 0.1 * cfg.tolerance {
            // retry near a kink: one-sided estimates at h and h/10, central at h/10
            let base = eval_at(j, 0.0)?;
            let mut candidates = Vec::with_capacity(5);
            for step in [h, h / 10.0] {
                let (p1, m1) = if step == h { (plus, minus) } else { (eval_at(j, step)?, eval_at(j, -step)?) };
                let p2 = eval_at(j, step / 2.0)?;
                let m2 = eval_at(j, -step / 2.0)?;
                candidates.push(2.0 * (p2 - base) / (step / 2.0) - (p1 - base) / step);
                candidates.push(2.0 * (base - m2) / (step / 2.0) - (base - m1) / step);
                if step != h {
                    candidates.push((p1 - m1) / (2.0 * step));
                }
            }
            for cand in candidates {
                let e = cfg.relative_error(a, cand);
                if e < err {
                    err = e;
                    numeric = cand;
                }
            }
            if err < 0.1 * cfg.tolerance {
                out.refined += 1;
            }
        }
        if err > out.max_rel_error || j == 0 {
            out.max_rel_error = err;
            out.worst_index = j;
            out.analytic = a;
            out.numeric = numeric;
        }
    }
    Ok(out)
}

/// `Σ y ⊙ R` for a fixed pseudo-random `R`, so every output element gets a
/// distinct upstream gradient.
pub fn weighted_sum(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let shape = tape.value(y)?.shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))?;
    let r = tape.constant(r);
    let prod = tape.mul(y, r)?;
    tape.sum(prod)
}

/// Uniform random tensor in `[lo, hi)`.
pub fn random_tensor(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Result<Tensor<f64>> {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(lo..hi))
}

/// Overwrites every parameter with values uniform in `[-scale, scale)`.
pub fn randomize_params(params: &mut ParamSet<f64>, scale: f64, rng: &mut impl Rng) {
    for p in params.iter_mut() {
        for v in p.value.data_mut() {
            *v = rng.gen_range(-scale..scale);
        }
    }
}
