//! Run configuration: one TOML file with a section per subsystem.
//!
//! ```toml
//! seed = 0
//! out = "runs/toy"
//!
//! [model]      # transformer shape
//! [schedule]   # training diffusion steps and β range
//! [sampler]    # kind, steps (T), cfg_scale, spacing
//! [pretrain]   # teacher pretraining
//! [train]      # router training
//! [eval]       # evaluation seeds, batch and baseline schedules
//! ```
//!
//! Every field except `out` has a default.
//! The global `seed` replaces the seed of every section.

use std::path::{Path, PathBuf};

use featcache::dit::DiTConfig;
use featcache::eval::{EvalSet, HeuristicSchedule};
use featcache::sampler::{NoiseSchedule, SamplerConfig, BETA_END, BETA_START, DEFAULT_TRAIN_STEPS};
use featcache::trainer::{PretrainConfig, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub train_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            train_steps: DEFAULT_TRAIN_STEPS,
            beta_start: BETA_START,
            beta_end: BETA_END,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalOptions {
    pub seeds: Vec<u64>,
    pub batch: usize,
    /// Baseline schedules evaluated next to the given routers.
    pub heuristics: Vec<HeuristicSchedule>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        let set = EvalSet::default();
        Self {
            seeds: set.seeds,
            batch: set.batch,
            heuristics: Vec::new(),
        }
    }
}

impl EvalOptions {
    pub fn set(&self) -> EvalSet {
        EvalSet {
            seeds: self.seeds.clone(),
            batch: self.batch,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub model: DiTConfig,
    pub schedule: ScheduleConfig,
    pub sampler: SamplerConfig,
    pub pretrain: PretrainConfig,
    pub train: TrainConfig,
    pub eval: EvalOptions,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    /// Applies the global seed to every section.
    pub fn propagate_seed(&mut self) {
        self.model.seed = self.seed;
        self.pretrain.seed = self.seed;
        self.train.seed = self.seed;
    }

    /// The configuration with the output directory cleared.
    pub fn without_out(&self) -> Self {
        Self {
            out: PathBuf::new(),
            ..self.clone()
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configuration serializes")
    }

    pub fn schedule(&self) -> NoiseSchedule {
        NoiseSchedule::linear(self.schedule.train_steps, self.schedule.beta_start, self.schedule.beta_end)
            .expect("validated schedule")
    }

    /// Every violated constraint across all sections.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.out.as_os_str().is_empty() {
            out.push("out: an output directory is required (set `out` or pass --out)".into());
        }
        out.extend(self.model.violations());
        let s = &self.schedule;
        if s.train_steps < 2 {
            out.push(format!("schedule.train_steps: must be at least 2, got {}", s.train_steps));
        }
        if !(0.0 < s.beta_start && s.beta_start <= s.beta_end && s.beta_end < 1.0) {
            out.push(format!(
                "schedule.beta_start/beta_end: need 0 < start <= end < 1, got {}..{}",
                s.beta_start, s.beta_end
            ));
        }
        out.extend(self.sampler.violations(s.train_steps));
        out.extend(self.pretrain.violations());
        out.extend(self.train.violations(self.sampler.steps));
        if self.eval.seeds.is_empty() {
            out.push("eval.seeds: at least one seed is required".into());
        }
        if self.eval.batch == 0 {
            out.push("eval.batch: must be at least 1".into());
        }
        let cells = self.sampler.steps * self.model.n_blocks();
        let cacheable = self.sampler.steps.saturating_sub(1) * self.model.n_blocks();
        for (k, h) in self.eval.heuristics.iter().enumerate() {
            match *h {
                HeuristicSchedule::ForaUniform { k: 0 } => {
                    out.push(format!("eval.heuristics[{k}].k: must be at least 1"));
                }
                HeuristicSchedule::Random { target_cur, .. }
                    if !(target_cur >= 0.0 && (target_cur * cells as f64).round() <= cacheable as f64) =>
                {
                    out.push(format!(
                        "eval.heuristics[{k}].target_cur: {target_cur} is outside [0, {}]",
                        cacheable as f64 / cells.max(1) as f64
                    ));
                }
                _ => {}
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    }

    #[test]
    fn round_trip_makes_defaults_explicit() {
        let mut cfg = RunConfig::parse("seed = 7\n[train]\nbeta = 2.5\n").unwrap();
        cfg.propagate_seed();
        let text = cfg.to_toml();
        assert!(text.contains("interval_c = 64"), "{text}");
        assert_eq!(RunConfig::parse(&text).unwrap(), cfg);
        assert_eq!(cfg.train.seed, 7);
    }

    #[test]
    fn lists_every_violation() {
        let cfg = RunConfig::parse("[model]\nd_model = 30\nn_heads = 4\n[train]\ninterval_c = 12\nbeta = -1.0\n").unwrap();
        let v = cfg.violations();
        assert!(v.iter().any(|m| m.starts_with("model.d_model")), "{v:?}");
        assert!(v.iter().any(|m| m.starts_with("train.interval_c")), "{v:?}");
        assert!(v.iter().any(|m| m.starts_with("train.beta")), "{v:?}");
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(RunConfig::parse("[train]\nlearning_rate = 1.0\n").is_err());
    }
}
