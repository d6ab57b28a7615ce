use serde::{Deserialize, Serialize};

use super::Parameters;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Step decay: `base / divisor^floor(epoch / every)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base: f64,
    pub divisor: f64,
    pub every: usize,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            base: 1e-3,
            divisor: 10.0,
            every: 100,
        }
    }
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.base > 0.0 && self.base.is_finite()) || !(self.divisor >= 1.0 && self.divisor.is_finite()) || self.every == 0 {
            return Err(Error::Config(format!("invalid learning-rate schedule {self:?}")));
        }
        Ok(())
    }

    /// Learning rate for a 0-based epoch index.
    pub fn lr(&self, epoch: usize) -> f64 {
        let k = (epoch / self.every) as i32;
        self.base / self.divisor.powi(k)
    }
}

/// First and second moment estimates for one parameter set.
#[derive(Debug, Clone)]
pub struct AdamState {
    config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new<P: Parameters>(params: &P, config: AdamConfig) -> Self {
        let n = params.num_params();
        Self {
            config,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    /// Applies one bias-corrected Adam update. Fails without modifying anything
    /// when a gradient entry is not finite.
    pub fn step<P: Parameters>(&mut self, params: &mut P, grads: &P, lr: f64) -> Result<()> {
        let grad_slices = grads.param_slices();
        let total: usize = grad_slices.iter().map(|s| s.len()).sum();
        if total != self.m.len() {
            return Err(Error::Shape(format!(
                "optimizer tracks {} parameters, gradient has {total}",
                self.m.len()
            )));
        }
        if !grad_slices.iter().all(|s| s.iter().all(|g| g.is_finite())) {
            return Err(Error::NonFinite("gradient".into()));
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, epsilon } = self.config;
        let bc1 = 1.0 - beta1.powf(self.step as f64);
        let bc2 = 1.0 - beta2.powf(self.step as f64);
        let mut k = 0;
        for (p_slice, g_slice) in params.param_slices_mut().into_iter().zip(grad_slices) {
            for (p, &g) in p_slice.iter_mut().zip(g_slice) {
                let m = beta1 * self.m[k] + (1.0 - beta1) * g;
                let v = beta2 * self.v[k] + (1.0 - beta2) * g * g;
                self.m[k] = m;
                self.v[k] = v;
                *p -= lr * (m / bc1) / ((v / bc2).sqrt() + epsilon);
                k += 1;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Scalars(Vec<f64>);

    impl Parameters for Scalars {
        fn param_slices(&self) -> Vec<&[f64]> {
            vec![&self.0]
        }
        fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
            vec![&mut self.0]
        }
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = Scalars(vec![0.0]);
        let mut opt = AdamState::new(&p, AdamConfig::default());
        opt.step(&mut p, &Scalars(vec![1.0]), 1e-3).unwrap();
        assert!((p.0[0] + 0.001).abs() < 1e-9);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = Scalars(vec![0.5, -2.0]);
        let mut opt = AdamState::new(&p, AdamConfig::default());
        for _ in 0..10 {
            opt.step(&mut p, &Scalars(vec![0.0, 0.0]), 1e-3).unwrap();
        }
        assert_eq!(p.0, vec![0.5, -2.0]);
    }

    #[test]
    fn moments_decay_with_zero_gradient() {
        let mut p = Scalars(vec![0.0]);
        let mut opt = AdamState::new(&p, AdamConfig::default());
        opt.step(&mut p, &Scalars(vec![2.0]), 1e-3).unwrap();
        let (m1, v1) = (opt.first_moment()[0], opt.second_moment()[0]);
        assert!((m1 - 0.2).abs() < 1e-12 && (v1 - 0.004).abs() < 1e-12);
        opt.step(&mut p, &Scalars(vec![0.0]), 1e-3).unwrap();
        assert!((opt.first_moment()[0] - 0.9 * m1).abs() < 1e-15);
        assert!((opt.second_moment()[0] - 0.999 * v1).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_is_rejected_without_update() {
        let mut p = Scalars(vec![1.0]);
        let mut opt = AdamState::new(&p, AdamConfig::default());
        assert!(opt.step(&mut p, &Scalars(vec![f64::NAN]), 1e-3).is_err());
        assert_eq!(p.0, vec![1.0]);
        assert_eq!(opt.steps_taken(), 0);
    }

    #[test]
    fn step_schedule_values() {
        let s = LrSchedule::default();
        assert_eq!(s.lr(0), 1e-3);
        assert_eq!(s.lr(99), 1e-3);
        assert_eq!(s.lr(100), 1e-4);
        assert_eq!(s.lr(199), 1e-4);
        assert_eq!(s.lr(200), 1e-5);
        assert_eq!(s.lr(299), 1e-5);
    }
}
