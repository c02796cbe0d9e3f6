//! Adaptive-moment (Adam) updates over flat parameter buffers.

use serde::{Deserialize, Serialize};

use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.99,
            epsilon: 1e-15,
        }
    }
}

/// Moment buffers for one parameter group.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    config: AdamConfig,
    lr: f64,
    m: Vec<T>,
    v: Vec<T>,
    step: u32,
}

impl<T: Real> Adam<T> {
    pub fn new(len: usize, lr: f64, config: AdamConfig) -> Self {
        Self {
            config,
            lr,
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u32 {
        self.step
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    /// One bias-corrected update of `params` against `grads`.
    pub fn step(&mut self, params: &mut [T], grads: &[T]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.step += 1;
        let c = &self.config;
        let b1 = T::lit(c.beta1);
        let b2 = T::lit(c.beta2);
        let one = T::one();
        let t = self.step as i32;
        // fold both bias corrections into the step size
        let corr1 = 1.0 - c.beta1.powi(t);
        let corr2 = 1.0 - c.beta2.powi(t);
        let step_size = T::lit(self.lr * corr2.sqrt() / corr1);
        let eps = T::lit(c.epsilon * corr2.sqrt());
        for ((p, &g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            *p -= step_size * *m / (v.sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut opt = Adam::<f64>::new(3, 0.01, AdamConfig::default());
        let mut p = vec![1.0, -2.0, 0.5];
        opt.step(&mut p, &[3.0, -0.1, 0.0]);
        assert!((p[0] - 0.99).abs() < 1e-12);
        assert!((p[1] + 1.99).abs() < 1e-12);
        assert_eq!(p[2], 0.5);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut opt = Adam::<f64>::new(2, 0.05, AdamConfig::default());
        let mut p = vec![3.0, -4.0];
        for _ in 0..2000 {
            let g = [2.0 * (p[0] - 1.0), 2.0 * (p[1] + 0.5)];
            opt.step(&mut p, &g);
        }
        assert!(
            (p[0] - 1.0).abs() < 1e-2 && (p[1] + 0.5).abs() < 1e-2,
            "{p:?}"
        );
    }
}
