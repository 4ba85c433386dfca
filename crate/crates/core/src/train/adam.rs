//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let beta_ok = |b: f64| (0.0..1.0).contains(&b);
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidInput("learning rate must be finite and non-negative".into()));
        }
        if !beta_ok(self.beta1) || !beta_ok(self.beta2) {
            return Err(Error::InvalidInput("Adam betas must lie in [0, 1)".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidInput("Adam epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// First and second moment estimates over the flattened parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self { step: 0, m: vec![0.0; len], v: vec![0.0; len] }
    }

    /// One update of `params` in place.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64], cfg: &AdamConfig) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::dim("adam step", self.m.len(), params.len().min(grads.len())));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient { group: "adam".into() });
        }
        self.step += 1;
        let b1t = 1.0 - cfg.beta1.powi(self.step as i32);
        let b2t = 1.0 - cfg.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = self.m[i] / b1t;
            let v_hat = self.v[i] / b2t;
            params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
        Ok(())
    }
}

/// Adam step over a whole parameter store.
pub fn adam_step(state: &mut AdamState, params: &mut ParamStore, grads: &ParamStore, cfg: &AdamConfig) -> Result<()> {
    if !params.same_layout(grads) {
        return Err(Error::InvalidInput("gradient layout differs from parameters".into()));
    }
    for (name, g) in grads.iter() {
        if g.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient { group: name.into() });
        }
    }
    let mut flat = params.flatten();
    state.update(&mut flat, &grads.flatten(), cfg)?;
    params.assign_flat(&flat)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = AdamState::new(3);
        s.m = vec![0.5, -0.5, 0.0];
        s.v = vec![0.25, 0.25, 0.0];
        let mut p = vec![1.0, 2.0, 3.0];
        let cfg = AdamConfig::default();
        s.update(&mut p, &[0.0; 3], &cfg).unwrap();
        // Moments decay; with nonzero history the params still move.
        assert_eq!(s.m, vec![0.45, -0.45, 0.0]);
        let mut fresh = AdamState::new(3);
        let mut q = vec![1.0, 2.0, 3.0];
        for _ in 0..10 {
            fresh.update(&mut q, &[0.0; 3], &cfg).unwrap();
        }
        assert_eq!(q, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn constant_gradient_steps_at_learning_rate() {
        let cfg = AdamConfig { learning_rate: 0.01, ..AdamConfig::default() };
        let mut s = AdamState::new(2);
        let mut p = vec![0.0, 0.0];
        let mut prev = p.clone();
        for _ in 0..100 {
            prev.copy_from_slice(&p);
            s.update(&mut p, &[3.0, -0.2], &cfg).unwrap();
        }
        assert!(((prev[0] - p[0]) - 0.01).abs() <= 1e-8);
        assert!(((p[1] - prev[1]) - 0.01).abs() <= 1e-6);
    }

    #[test]
    fn convex_quadratic_converges() {
        let f = |w: &[f64]| (w[0] - 1.0).powi(2) + 10.0 * (w[1] + 2.0).powi(2);
        let cfg = AdamConfig { learning_rate: 0.1, ..AdamConfig::default() };
        let mut s = AdamState::new(2);
        let mut w = vec![4.0, 3.0];
        for _ in 0..200 {
            let g = [2.0 * (w[0] - 1.0), 20.0 * (w[1] + 2.0)];
            s.update(&mut w, &g, &cfg).unwrap();
        }
        assert!(f(&w) <= 1e-6, "{w:?}");
    }

    #[test]
    fn rejects_non_finite() {
        let mut s = AdamState::new(1);
        assert!(s.update(&mut [0.0], &[f64::NAN], &AdamConfig::default()).is_err());
        assert_eq!(s.step, 0);
    }
}
