use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const DEFAULT_TRAIN_STEPS: usize = 1000;
pub const BETA_START: f64 = 1e-4;
pub const BETA_END: f64 = 0.02;

/// Linear-β diffusion schedule over training steps `1..=T_train`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas_bar: Vec<f64>,
}

/// Builds the linear schedule from `BETA_START` to `BETA_END`.
pub fn make_schedule(train_steps: usize) -> Result<NoiseSchedule> {
    NoiseSchedule::linear(train_steps, BETA_START, BETA_END)
}

impl NoiseSchedule {
    pub fn linear(train_steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if train_steps < 2 {
            return Err(Error::Config(format!("T_train must be at least 2, got {train_steps}")));
        }
        if !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::Config(format!(
                "beta bounds must satisfy 0 < start <= end < 1, got {beta_start}..{beta_end}"
            )));
        }
        let span = (train_steps - 1) as f64;
        let betas: Vec<f64> = (0..train_steps)
            .map(|k| beta_start + (beta_end - beta_start) * k as f64 / span)
            .collect();
        let mut prod = 1.0;
        let alphas_bar = betas
            .iter()
            .map(|b| {
                prod *= 1.0 - b;
                prod
            })
            .collect();
        Ok(Self { betas, alphas_bar })
    }

    pub fn train_steps(&self) -> usize {
        self.betas.len()
    }

    /// `β` values; index `k` belongs to training step `k + 1`.
    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    /// Cumulative products; index `k` belongs to training step `k + 1`.
    pub fn alphas_bar(&self) -> &[f64] {
        &self.alphas_bar
    }

    /// `ᾱ_s` for training step `s`, with `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, s: usize) -> Result<f64> {
        match s {
            0 => Ok(1.0),
            s if s <= self.betas.len() => Ok(self.alphas_bar[s - 1]),
            s => Err(Error::IndexOutOfRange {
                what: "training step",
                index: s,
                limit: self.betas.len(),
            }),
        }
    }

    /// `x_s = √ᾱ_s·x_0 + √(1−ᾱ_s)·ε`.
    pub fn add_noise(&self, x0: &Tensor, eps: &Tensor, s: usize) -> Result<Tensor> {
        let ab = self.alpha_bar(s)?;
        combine(x0, ab.sqrt(), eps, (1.0 - ab).sqrt())
    }
}

/// `a·x + b·y` over equally shaped tensors.
pub(crate) fn combine(x: &Tensor, a: f64, y: &Tensor, b: f64) -> Result<Tensor> {
    if x.shape() != y.shape() {
        return Err(Error::dim("combine", x.shape(), y.shape()));
    }
    let data = x.data().iter().zip(y.data()).map(|(u, v)| a * u + b * v).collect();
    Tensor::new(x.shape().to_vec(), data)
}

/// Deterministic DDIM (η = 0) update between training steps `s_hi > s_lo`.
pub fn ddim_step(schedule: &NoiseSchedule, x: &Tensor, s_hi: usize, s_lo: usize, eps: &Tensor) -> Result<Tensor> {
    if s_hi <= s_lo {
        return Err(Error::Config(format!("ddim step needs t_hi > t_lo, got {s_hi} -> {s_lo}")));
    }
    let (hi, lo) = (schedule.alpha_bar(s_hi)?, schedule.alpha_bar(s_lo)?);
    if !(hi > 0.0 && lo > 0.0) {
        return Err(Error::Numeric(format!("nonpositive alpha_bar at step {s_hi} or {s_lo}")));
    }
    if x.shape() != eps.shape() {
        return Err(Error::dim("ddim step", x.shape(), eps.shape()));
    }
    let (s_hi, n_hi) = (hi.sqrt(), (1.0 - hi).sqrt());
    let data = x.data().iter().zip(eps.data()).map(|(v, e)| (v - n_hi * e) / s_hi).collect();
    let x0 = Tensor::new(x.shape().to_vec(), data)?;
    if s_lo == 0 {
        return Ok(x0);
    }
    combine(&x0, lo.sqrt(), eps, (1.0 - lo).sqrt())
}

/// Euler update on a linear time grid: `x + (σ_lo − σ_hi)·v`.
pub fn euler_step(x: &Tensor, sigma_hi: f64, sigma_lo: f64, velocity: &Tensor) -> Result<Tensor> {
    if sigma_hi <= sigma_lo {
        return Err(Error::Config(format!("euler step needs t_hi > t_lo, got {sigma_hi} -> {sigma_lo}")));
    }
    combine(x, 1.0, velocity, sigma_lo - sigma_hi)
}

/// Maps inference steps `0..=T` onto training steps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spacing {
    /// `round(t · T_train / T)`: uniform stride ending exactly at `T_train`.
    #[default]
    Uniform,
    /// `t · floor(T_train / T)`.
    Leading,
}

impl Spacing {
    pub fn train_step(self, t: usize, steps: usize, train_steps: usize) -> usize {
        match self {
            Spacing::Uniform => ((t * train_steps) as f64 / steps as f64).round() as usize,
            Spacing::Leading => t * (train_steps / steps),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_and_monotone() {
        let s = make_schedule(1000).unwrap();
        assert_eq!(s.betas()[0], BETA_START);
        assert!((s.betas()[999] - BETA_END).abs() < 1e-18);
        assert!(s.alphas_bar().windows(2).all(|w| w[1] < w[0]));
        assert!(s.alphas_bar()[0] > 0.999);
        assert_eq!(s.alpha_bar(0).unwrap(), 1.0);
        assert!(s.alpha_bar(1001).is_err());
    }

    #[test]
    fn zero_noise_scales_input() {
        let s = make_schedule(1000).unwrap();
        let x = Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
        let eps = Tensor::zeros(&[3]);
        let out = ddim_step(&s, &x, 750, 500, &eps).unwrap();
        let k = s.alpha_bar(500).unwrap().sqrt() / s.alpha_bar(750).unwrap().sqrt();
        for (o, v) in out.data().iter().zip(x.data()) {
            assert!((o - k * v).abs() < 1e-15);
        }
    }

    #[test]
    fn final_step_returns_clean_estimate() {
        let s = make_schedule(1000).unwrap();
        let x = Tensor::new(vec![2], vec![0.3, -0.7]).unwrap();
        let eps = Tensor::new(vec![2], vec![0.1, 0.2]).unwrap();
        let ab = s.alpha_bar(125).unwrap();
        let out = ddim_step(&s, &x, 125, 0, &eps).unwrap();
        for i in 0..2 {
            let x0 = (x.data()[i] - (1.0 - ab).sqrt() * eps.data()[i]) / ab.sqrt();
            assert_eq!(out.data()[i], x0);
        }
        assert!(ddim_step(&s, &x, 0, 0, &eps).is_err());
    }

    #[test]
    fn euler_basics() {
        let x = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let v0 = Tensor::zeros(&[2]);
        assert_eq!(euler_step(&x, 1.0, 0.5, &v0).unwrap(), x);
        // linear path x(σ) = x0 + σ·(x1 − x0) with v = x1 − x0
        let x1 = Tensor::new(vec![2], vec![3.0, -1.0]).unwrap();
        let x0 = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let v = combine(&x1, 1.0, &x0, -1.0).unwrap();
        assert_eq!(euler_step(&x1, 1.0, 0.0, &v).unwrap(), x0);
    }

    #[test]
    fn spacing_covers_range() {
        assert_eq!(Spacing::Uniform.train_step(8, 8, 1000), 1000);
        assert_eq!(Spacing::Uniform.train_step(1, 8, 1000), 125);
        assert_eq!(Spacing::Uniform.train_step(1, 3, 1000), 333);
        assert_eq!(Spacing::Leading.train_step(3, 3, 1000), 999);
        assert_eq!(Spacing::Uniform.train_step(0, 8, 1000), 0);
    }
}
