//! AdamW: decoupled weight decay followed by a bias-corrected Adam step.

use serde::{Deserialize, Serialize};

use crate::numerics::{ParamSet, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-3,
            weight_decay: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment buffers, one pair per parameter.
#[derive(Clone, Debug)]
pub struct AdamW<T: Scalar> {
    pub config: AdamWConfig,
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(config: AdamWConfig, params: &ParamSet<T>) -> Self {
        AdamW {
            config,
            step: 0,
            m: params.iter().map(|p| p.value.zeros_like()).collect(),
            v: params.iter().map(|p| p.value.zeros_like()).collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update to every trainable parameter from its accumulated gradient.
    pub fn step(&mut self, params: &mut ParamSet<T>) {
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = T::of(1.0 - c.beta1.powi(t));
        let bc2 = T::of(1.0 - c.beta2.powi(t));
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let (lr, eps) = (T::of(c.lr), T::of(c.eps));
        let decay = T::of(1.0 - c.lr * c.weight_decay);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            if !p.trainable {
                continue;
            }
            let grads = p.grad.data();
            for (((w, &g), m), v) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(grads)
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *w *= decay;
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64, grad: f64) -> ParamSet<f64> {
        let mut ps = ParamSet::new();
        let id = ps.add("p", Tensor::new(vec![1], vec![value]).unwrap()).unwrap();
        ps.get_mut(id).grad = Tensor::new(vec![1], vec![grad]).unwrap();
        ps
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut ps = single(1.0, 1.0);
        let cfg = AdamWConfig {
            lr: 0.1,
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut opt = AdamW::new(cfg, &ps);
        opt.step(&mut ps);
        // m̂ = 1, v̂ = 1 → update 0.1/(1+1e-8)
        let got = ps.iter().next().unwrap().value.data()[0];
        assert!((got - 0.9).abs() < 1e-8, "{got}");
    }

    #[test]
    fn zero_grad_without_decay_is_fixed_point() {
        let mut ps = single(0.37, 0.0);
        let mut opt = AdamW::new(AdamWConfig { weight_decay: 0.0, ..Default::default() }, &ps);
        for _ in 0..5 {
            opt.step(&mut ps);
        }
        assert_eq!(ps.iter().next().unwrap().value.data()[0], 0.37);
    }

    #[test]
    fn zero_grad_decays_geometrically() {
        let mut ps = single(2.5, 0.0);
        let cfg = AdamWConfig {
            lr: 0.05,
            weight_decay: 0.2,
            ..Default::default()
        };
        let mut opt = AdamW::new(cfg, &ps);
        let factor = 1.0 - 0.05 * 0.2;
        let mut expect = 2.5;
        for _ in 0..4 {
            opt.step(&mut ps);
            expect *= factor;
            assert_eq!(ps.iter().next().unwrap().value.data()[0], expect);
        }
    }
}
