use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// AdamW hyperparameters with decoupled weight decay.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

impl AdamConfig {
    pub fn violations(&self, prefix: &str) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            out.push(format!("{prefix}.lr: must be positive, got {}", self.lr));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                out.push(format!("{prefix}.{name}: must lie in [0, 1), got {b}"));
            }
        }
        if !(self.eps > 0.0) {
            out.push(format!("{prefix}.eps: must be positive, got {}", self.eps));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            out.push(format!("{prefix}.weight_decay: must be >= 0, got {}", self.weight_decay));
        }
        out
    }
}

/// First/second moment estimates for one parameter group.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, cfg: &AdamConfig, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::dim("adam update", &[params.len(), grads.len()], &[self.m.len()]));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite { op: "adam gradient" });
        }
        self.step += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.step as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.step as i32);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            *p -= cfg.lr * cfg.weight_decay * *p;
            *p -= cfg.lr * (*m / bc1) / ((*v / bc2).sqrt() + cfg.eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_gradient() {
        let cfg = AdamConfig::default();
        let mut s = AdamState::new(3);
        let mut p = [1.0, -2.0, 0.5];
        s.update(&cfg, &mut p, &[3.0, -0.001, 0.0]).unwrap();
        assert!((p[0] - (1.0 - 0.01)).abs() < 1e-9);
        assert!((p[1] - (-2.0 + 0.01)).abs() < 1e-6);
        assert_eq!(p[2], 0.5);
    }

    #[test]
    fn decoupled_weight_decay() {
        let cfg = AdamConfig {
            weight_decay: 0.5,
            ..AdamConfig::default()
        };
        let mut s = AdamState::new(1);
        let mut p = [2.0];
        s.update(&cfg, &mut p, &[0.0]).unwrap();
        assert!((p[0] - 2.0 * (1.0 - 0.005)).abs() < 1e-15);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let cfg = AdamConfig {
            lr: 0.05,
            ..AdamConfig::default()
        };
        let mut s = AdamState::new(2);
        let mut p = [3.0, -1.0];
        for _ in 0..2000 {
            let g = [2.0 * (p[0] - 1.0), 2.0 * (p[1] + 0.5)];
            s.update(&cfg, &mut p, &g).unwrap();
        }
        assert!((p[0] - 1.0).abs() < 1e-3 && (p[1] + 0.5).abs() < 1e-3);
    }
}
