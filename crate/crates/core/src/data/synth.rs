//! Deterministic synthetic two-channel (inflow/outflow) traffic.
//!
//! Every cell carries a daily sinusoid with its own phase and amplitude; a
//! few Gaussian hotspots circle the grid once per period, so neighbouring
//! regions peak at different times and the busiest cells move.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::dataset::TrafficDataset;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub height: usize,
    pub width: usize,
    pub steps: usize,
    pub seed: u64,
    /// Frames per daily cycle.
    pub period: usize,
    pub interval_minutes: u32,
    pub hotspots: usize,
    /// Noise standard deviation relative to the mean level.
    pub noise: f64,
    /// Average level of a cell.
    pub scale: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            height: 16,
            width: 8,
            steps: 512,
            seed: 0,
            period: 48,
            interval_minutes: 30,
            hotspots: 3,
            noise: 0.05,
            scale: 50.0,
        }
    }
}

struct Hotspot {
    center: (f64, f64),
    radius: f64,
    orbit: f64,
    phase: f64,
    sigma: f64,
    strength: f64,
}

pub fn synth_traffic(spec: &SynthSpec) -> Result<TrafficDataset> {
    if spec.height == 0 || spec.width == 0 || spec.steps == 0 || spec.period == 0 {
        return Err(Error::InvalidConfig(format!(
            "synthetic grid needs positive height, width, steps and period, got {}×{}, {} steps, period {}",
            spec.height, spec.width, spec.steps, spec.period
        )));
    }
    let (h, w) = (spec.height, spec.width);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let cells: Vec<(f64, f64, f64)> = (0..h * w)
        .map(|_| {
            let base = rng.gen_range(0.3..1.0);
            let amp = rng.gen_range(0.2..0.9) * base;
            (base, amp, rng.gen_range(0.0..TAU))
        })
        .collect();
    let spots: Vec<Hotspot> = (0..spec.hotspots)
        .map(|_| Hotspot {
            center: (rng.gen_range(0.0..h as f64), rng.gen_range(0.0..w as f64)),
            radius: rng.gen_range(0.1..0.3) * h.min(w) as f64,
            orbit: if rng.gen_bool(0.5) { 1.0 } else { -1.0 },
            phase: rng.gen_range(0.0..TAU),
            sigma: rng.gen_range(0.8..1.6) * (h.min(w) as f64 / 8.0).max(0.5),
            strength: rng.gen_range(0.8..1.6),
        })
        .collect();
    // outflow trails inflow
    let lag = TAU / 8.0;
    let noise = Normal::new(0.0, spec.noise).map_err(|e| Error::InvalidConfig(e.to_string()))?;

    let mut data = Vec::with_capacity(spec.steps * 2 * h * w);
    for t in 0..spec.steps {
        let angle = TAU * t as f64 / spec.period as f64;
        for c in 0..2 {
            let a = angle - lag * c as f64;
            for y in 0..h {
                for x in 0..w {
                    let (base, amp, phase) = cells[y * w + x];
                    let mut v = base + amp * (a + phase).sin();
                    for s in &spots {
                        let th = s.orbit * a + s.phase;
                        let (cy, cx) = (s.center.0 + s.radius * th.sin(), s.center.1 + s.radius * th.cos());
                        let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                        v += s.strength * (-d2 / (2.0 * s.sigma * s.sigma)).exp();
                    }
                    v += noise.sample(&mut rng);
                    data.push((spec.scale * v).max(0.0) as f32);
                }
            }
        }
    }
    let frames = Tensor::new(vec![spec.steps, 2, h, w], data)?;
    TrafficDataset::new(format!("synth-{h}x{w}-s{}", spec.seed), spec.interval_minutes, frames)
}
