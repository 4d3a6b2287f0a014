//! Adam with decoupled weight decay and a cosine learning-rate schedule.

use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Cosine decay from `lr_max` to `lr_min` over `total_steps`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CosineSchedule {
    pub lr_max: f64,
    pub lr_min: f64,
    pub total_steps: usize,
}

impl CosineSchedule {
    pub fn lr(&self, step: usize) -> f64 {
        if self.total_steps <= 1 {
            return self.lr_max;
        }
        let t = (step.min(self.total_steps - 1)) as f64 / (self.total_steps - 1) as f64;
        self.lr_min + 0.5 * (self.lr_max - self.lr_min) * (1.0 + (core::f64::consts::PI * t).cos())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// Optimizer state. Weight decay applies to tensors of rank ≥ 2 only, so
/// biases and normalisation gains are left alone.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW<T> {
    pub config: AdamWConfig,
    pub step: usize,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(config: AdamWConfig, params: &[Tensor<T>]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One update with learning rate `lr`.
    pub fn update(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::Contract(alloc::format!(
                "optimizer tracks {} tensors, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let (b1, b2) = (T::of_f64(c.beta1), T::of_f64(c.beta2));
        let (ob1, ob2) = (T::one() - b1, T::one() - b2);
        let step_size = T::of_f64(lr / bc1);
        let inv_bc2_sqrt = T::of_f64(1.0 / bc2.sqrt());
        let eps = T::of_f64(c.eps);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            if p.shape() != g.shape() {
                return crate::error::shape_err("optimizer update", p.shape(), g.shape());
            }
            let decay = if p.rank() >= 2 {
                T::one() - T::of_f64(lr * c.weight_decay)
            } else {
                T::one()
            };
            let (pd, md, vd) = (p.data_mut(), m.data_mut(), v.data_mut());
            for i in 0..pd.len() {
                let gi = g[i];
                md[i] = b1 * md[i] + ob1 * gi;
                vd[i] = b2 * vd[i] + ob2 * gi * gi;
                let denom = vd[i].sqrt() * inv_bc2_sqrt + eps;
                pd[i] = pd[i] * decay - step_size * md[i] / denom;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints() {
        let s = CosineSchedule {
            lr_max: 1e-3,
            lr_min: 1e-5,
            total_steps: 101,
        };
        assert!((s.lr(0) - 1e-3).abs() < 1e-15);
        assert!((s.lr(100) - 1e-5).abs() < 1e-15);
        assert!((s.lr(50) - 0.5 * (1e-3 + 1e-5)).abs() < 1e-15);
        assert!((1..101).all(|i| s.lr(i) <= s.lr(i - 1)));
    }

    #[test]
    fn first_step_moves_by_lr() {
        // With bias correction the first Adam step is lr·sign(g).
        let mut p = vec![Tensor::<f64>::from_f64(&[2], &[1.0, -1.0]).unwrap()];
        let g = vec![Tensor::from_f64(&[2], &[0.3, -5.0]).unwrap()];
        let mut opt = AdamW::new(AdamWConfig::default(), &p);
        opt.update(&mut p, &g, 0.1).unwrap();
        assert!((p[0][0] - 0.9).abs() < 1e-6);
        assert!((p[0][1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn decay_is_decoupled() {
        let mut p = vec![Tensor::<f64>::full(&[2, 2], 2.0)];
        let g = vec![Tensor::zeros(&[2, 2])];
        let cfg = AdamWConfig {
            weight_decay: 0.5,
            ..AdamWConfig::default()
        };
        let mut opt = AdamW::new(cfg, &p);
        opt.update(&mut p, &g, 0.1).unwrap();
        assert!((p[0][0] - 2.0 * 0.95).abs() < 1e-12);
    }

    #[test]
    fn minimises_quadratic() {
        let mut p = vec![Tensor::<f64>::from_f64(&[3], &[3.0, -2.0, 0.5]).unwrap()];
        let mut opt = AdamW::new(AdamWConfig::default(), &p);
        for _ in 0..2000 {
            let g = vec![p[0].map(|x| 2.0 * x)];
            opt.update(&mut p, &g, 0.01).unwrap();
        }
        assert!(p[0].data().iter().all(|x| x.abs() < 1e-2), "{:?}", p[0]);
    }
}
