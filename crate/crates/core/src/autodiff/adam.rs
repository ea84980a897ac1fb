//! Bias-corrected Adam over a [`ParamStore`].

use serde::{Deserialize, Serialize};

use crate::autodiff::params::ParamStore;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer state: first/second moment buffers aligned with the store's
/// entry order (frozen entries keep empty buffers).
#[derive(Clone, Debug)]
pub struct Adam {
    pub cfg: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, store: &ParamStore) -> Self {
        let m = store
            .entries()
            .iter()
            .map(|e| if e.trainable { vec![0.0; e.numel()] } else { Vec::new() })
            .collect::<Vec<_>>();
        let v = m.clone();
        Adam { cfg, step: 0, m, v }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Rebuild from checkpointed buffers.
    pub fn from_parts(cfg: AdamConfig, step: u64, m: Vec<Vec<f64>>, v: Vec<Vec<f64>>) -> Self {
        Adam { cfg, step, m, v }
    }

    pub fn moments(&self) -> (&[Vec<f64>], &[Vec<f64>]) {
        (&self.m, &self.v)
    }

    /// One optimizer step. `grads` is index-aligned with the store; `None`
    /// entries (frozen or unused parameters) are skipped. A non-finite
    /// gradient aborts with the parameter's name.
    pub fn apply(&mut self, store: &mut ParamStore, grads: &[Option<Vec<f64>>]) -> Result<()> {
        assert_eq!(grads.len(), store.len(), "gradient list must align with the store");
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.cfg.beta1.powi(t);
        let bc2 = 1.0 - self.cfg.beta2.powi(t);
        for (idx, entry) in store.entries_mut().iter_mut().enumerate() {
            let Some(g) = &grads[idx] else { continue };
            if !entry.trainable {
                continue;
            }
            if !g.iter().all(|v| v.is_finite()) {
                return Err(Error::non_finite(format!("gradient of parameter {}", entry.name)));
            }
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            for j in 0..g.len() {
                m[j] = self.cfg.beta1 * m[j] + (1.0 - self.cfg.beta1) * g[j];
                v[j] = self.cfg.beta2 * v[j] + (1.0 - self.cfg.beta2) * g[j] * g[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                entry.data[j] -= self.cfg.lr * mhat / (vhat.sqrt() + self.cfg.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param_store(value: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("theta", 1, 1, vec![value], true).unwrap();
        s
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut store = one_param_store(0.7);
        let mut adam = Adam::new(AdamConfig::default(), &store);
        adam.apply(&mut store, &[Some(vec![0.0])]).unwrap();
        assert_eq!(store.get("theta").unwrap().data[0], 0.7);
    }

    #[test]
    fn first_step_with_unit_gradient_moves_by_lr() {
        let mut store = one_param_store(0.0);
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        let mut adam = Adam::new(cfg, &store);
        adam.apply(&mut store, &[Some(vec![1.0])]).unwrap();
        let theta = store.get("theta").unwrap().data[0];
        assert!((theta - (-0.1)).abs() <= 1e-9, "got {theta}");
    }

    #[test]
    fn quadratic_converges_within_500_steps() {
        // loss = (theta - 0.3)^2 / 2, gradient theta - 0.3.
        let mut store = one_param_store(1.0);
        let cfg = AdamConfig {
            lr: 0.05,
            ..AdamConfig::default()
        };
        let mut adam = Adam::new(cfg, &store);
        for _ in 0..500 {
            let theta = store.get("theta").unwrap().data[0];
            adam.apply(&mut store, &[Some(vec![theta - 0.3])]).unwrap();
        }
        let theta = store.get("theta").unwrap().data[0];
        assert!((theta - 0.3).abs() < 1e-3, "got {theta}");
    }

    #[test]
    fn nan_gradient_names_the_parameter() {
        let mut store = one_param_store(0.0);
        let mut adam = Adam::new(AdamConfig::default(), &store);
        let err = adam.apply(&mut store, &[Some(vec![f64::NAN])]).unwrap_err();
        assert!(err.to_string().contains("theta"), "{err}");
    }

    #[test]
    fn frozen_parameters_are_skipped() {
        let mut store = ParamStore::new();
        store.add("frozen", 1, 1, vec![0.5], false).unwrap();
        let mut adam = Adam::new(AdamConfig::default(), &store);
        adam.apply(&mut store, &[Some(vec![1.0])]).unwrap();
        assert_eq!(store.get("frozen").unwrap().data[0], 0.5);
    }

    #[test]
    fn step_counter_increments_once_per_apply() {
        let mut store = one_param_store(0.0);
        let mut adam = Adam::new(AdamConfig::default(), &store);
        for expect in 1..=3 {
            adam.apply(&mut store, &[Some(vec![0.1])]).unwrap();
            assert_eq!(adam.step_count(), expect);
        }
    }
}
