use serde::{Deserialize, Serialize};

use super::optim::AdamConfig;
use crate::caching::{RouterInit, DEFAULT_TAU};
use crate::error::{Error, Result};

/// Per-step weighting of the noise-prediction error.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Weighted by the final-image error proxy λ, refreshed every `C` iterations.
    #[default]
    Iepo,
    /// Unweighted (λ ≡ 1).
    Ltc,
}

/// How the state `x_t` seen by the router at each update is produced.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Paradigm {
    /// Walk the whole cached denoising trajectory, one row update per step.
    #[default]
    Sdt,
    /// Forward-noise a data sample to a random step, pre-fill there, train the next row.
    Ltc,
}

/// Distance between the unmasked and masked final images.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProxyMetric {
    /// Squared Frobenius distance.
    #[default]
    Fro,
    /// Sum of absolute differences.
    L1,
    /// KL divergence of per-sample normalized images.
    Kl,
}

/// Which pre-fill steps the LTC paradigm draws.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LtcSampling {
    /// Even `t` only, so only odd rows are trained.
    #[default]
    Even,
    /// Any `t` in `2..=T`.
    Any,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Row updates in total; SDT runs `iters / T` trajectories.
    pub iters: usize,
    pub beta: f64,
    /// Proxy refresh interval `C`, a multiple of `T`.
    pub interval_c: usize,
    pub optimizer: AdamConfig,
    pub objective: Objective,
    pub paradigm: Paradigm,
    pub teacher_forcing: bool,
    pub proxy_metric: ProxyMetric,
    pub ltc_sampling: LtcSampling,
    pub batch: usize,
    pub tau: f64,
    pub init: RouterInit,
    /// Keep a router snapshot every this many row updates (0 disables).
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iters: 2000,
            beta: 5.0,
            interval_c: 64,
            optimizer: AdamConfig {
                lr: 0.04,
                ..AdamConfig::default()
            },
            objective: Objective::Iepo,
            paradigm: Paradigm::Sdt,
            teacher_forcing: false,
            proxy_metric: ProxyMetric::Fro,
            ltc_sampling: LtcSampling::Even,
            batch: 8,
            tau: DEFAULT_TAU,
            init: RouterInit::default(),
            checkpoint_every: 0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Every violated constraint, given `T` inference steps.
    pub fn violations(&self, steps: usize) -> Vec<String> {
        let mut out = Vec::new();
        if self.iters == 0 {
            out.push("train.iters: must be at least 1".into());
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            out.push(format!("train.beta: must be finite and >= 0, got {}", self.beta));
        }
        if self.interval_c == 0 || steps == 0 || self.interval_c % steps != 0 {
            out.push(format!(
                "train.interval_c: must be a positive multiple of T={steps}, got {}",
                self.interval_c
            ));
        }
        if self.batch == 0 {
            out.push("train.batch: must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.tau) {
            out.push(format!("train.tau: must lie in [0, 1), got {}", self.tau));
        }
        if !(self.init.std > 0.0 && self.init.std.is_finite() && self.init.mean.is_finite()) {
            out.push("train.init: mean must be finite and std positive".into());
        }
        if self.paradigm == Paradigm::Ltc && steps < 2 {
            out.push("train.paradigm: ltc needs T >= 2".into());
        }
        out.extend(self.optimizer.violations("train.optimizer"));
        out
    }

    pub fn validate(&self, steps: usize) -> Result<()> {
        let v = self.violations(steps);
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v.join("; ")))
        }
    }
}
