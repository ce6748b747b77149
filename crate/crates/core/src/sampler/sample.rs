use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::schedule::{ddim_step, euler_step, NoiseSchedule, Spacing};
use crate::autodiff::{Backend, Eager, Tensor};
use crate::caching::{Cache, GateMatrix};
use crate::dit::{Condition, DiTModel};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    /// Deterministic DDIM; the model predicts noise.
    #[default]
    Ddim,
    /// Euler on σ = t/T; the model output is read as a velocity.
    Euler,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    /// Inference steps `T`.
    pub steps: usize,
    /// Guidance scale `w`; 1 disables the unconditional branch.
    pub cfg_scale: f64,
    pub spacing: Spacing,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            kind: SamplerKind::Ddim,
            steps: 8,
            cfg_scale: 1.0,
            spacing: Spacing::Uniform,
        }
    }
}

impl SamplerConfig {
    pub fn violations(&self, train_steps: usize) -> Vec<String> {
        let mut out = Vec::new();
        if self.steps == 0 {
            out.push("sampler.steps: must be at least 1".into());
        } else if self.steps > train_steps {
            out.push(format!(
                "sampler.steps: {} exceeds the {train_steps} training steps",
                self.steps
            ));
        }
        if !(self.cfg_scale >= 1.0 && self.cfg_scale.is_finite()) {
            out.push(format!("sampler.cfg_scale: must be a finite value >= 1, got {}", self.cfg_scale));
        }
        out
    }

    pub fn validate(&self, train_steps: usize) -> Result<()> {
        let v = self.violations(train_steps);
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v.join("; ")))
        }
    }

    pub fn guided(&self) -> bool {
        self.cfg_scale != 1.0
    }

    /// Training step used as the model's time condition at inference step `t`.
    pub fn train_step(&self, schedule: &NoiseSchedule, t: usize) -> usize {
        self.spacing.train_step(t, self.steps, schedule.train_steps())
    }

    pub fn condition(&self, schedule: &NoiseSchedule, t: usize, classes: &[Option<usize>]) -> Condition {
        Condition::new(self.train_step(schedule, t), classes.to_vec())
    }

    /// One solver step `x_t → x_{t−1}` given the model output at `t`.
    pub fn advance(&self, schedule: &NoiseSchedule, x: &Tensor, t: usize, out: &Tensor) -> Result<Tensor> {
        if t == 0 || t > self.steps {
            return Err(Error::IndexOutOfRange {
                what: "timestep",
                index: t,
                limit: self.steps,
            });
        }
        match self.kind {
            SamplerKind::Ddim => ddim_step(
                schedule,
                x,
                self.train_step(schedule, t),
                self.train_step(schedule, t - 1),
                out,
            ),
            SamplerKind::Euler => {
                let n = self.steps as f64;
                euler_step(x, t as f64 / n, (t - 1) as f64 / n, out)
            }
        }
    }
}

/// `ε_null + w·(ε_cond − ε_null)`.
pub fn apply_guidance<B: Backend>(be: &mut B, w: f64, cond: &B::Value, null: &B::Value) -> Result<B::Value> {
    let diff = be.sub(cond, null)?;
    let diff = be.scale(&diff, w)?;
    be.add(null, &diff)
}

/// Standard normal tensor from a seeded stream.
pub fn gaussian(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    gaussian_from(shape, &mut rng)
}

pub fn gaussian_from(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.sample(StandardNormal))
}

/// What happened at one denoising step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub t: usize,
    pub train_step: usize,
    /// Guided model output used for the update.
    pub eps: Tensor,
    /// Block evaluations across all guidance branches.
    pub computed: usize,
    pub reused: usize,
}

/// States `x_start … x_0` of one generation with per-step records
/// (`t = start` first); `start` is `T` for a full generation.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    start: usize,
    states: Vec<Tensor>,
    pub records: Vec<StepRecord>,
}

impl Trajectory {
    pub fn start(&self) -> usize {
        self.start
    }

    /// `x_t` for `0 ≤ t ≤ start`.
    pub fn x(&self, t: usize) -> &Tensor {
        &self.states[self.start - t]
    }

    pub fn x0(&self) -> &Tensor {
        self.states.last().expect("trajectory holds its first state")
    }

    pub fn record(&self, t: usize) -> &StepRecord {
        &self.records[self.start - t]
    }

    pub fn total_computed(&self) -> usize {
        self.records.iter().map(|r| r.computed).sum()
    }
}

/// One cache per guidance branch: conditional first, then unconditional
/// when guidance is active.
#[derive(Clone, Debug)]
pub struct BranchCaches {
    caches: Vec<Cache>,
}

impl BranchCaches {
    pub fn new(n_blocks: usize, sampler: &SamplerConfig) -> Self {
        let n = if sampler.guided() { 2 } else { 1 };
        Self {
            caches: (0..n).map(|_| Cache::new(n_blocks)).collect(),
        }
    }

    pub fn caches(&self) -> &[Cache] {
        &self.caches
    }

    pub fn caches_mut(&mut self) -> &mut [Cache] {
        &mut self.caches
    }
}

/// Labels seen by guidance branch `k`.
pub fn branch_classes(classes: &[Option<usize>], k: usize) -> Vec<Option<usize>> {
    if k == 0 {
        classes.to_vec()
    } else {
        vec![None; classes.len()]
    }
}

/// Guided model output at inference step `t` without a graph.
///
/// `row` selects hard caching with threshold `tau`; `None` runs the plain
/// network and leaves the caches alone. Returns the output with the number of
/// block evaluations and cache reads over all branches.
#[allow(clippy::too_many_arguments)]
pub fn predict(
    model: &DiTModel,
    schedule: &NoiseSchedule,
    config: &SamplerConfig,
    x: &Tensor,
    t: usize,
    classes: &[Option<usize>],
    row: Option<(&[f64], f64)>,
    caches: &mut BranchCaches,
) -> Result<(Tensor, usize, usize)> {
    let n = model.n_blocks();
    let mut outs = Vec::with_capacity(caches.caches.len());
    let (mut computed, mut reused) = (0, 0);
    for (k, cache) in caches.caches.iter_mut().enumerate() {
        let cond = config.condition(schedule, t, &branch_classes(classes, k));
        let out = match row {
            None => {
                computed += n;
                model.forward_plain(x, &cond)?
            }
            Some((gates, tau)) => {
                let out = model.forward_hard(x, &cond, gates, tau, cache)?;
                let stats = cache.take_stats();
                computed += stats.computed;
                reused += stats.reused;
                out
            }
        };
        outs.push(out);
    }
    let eps = match outs.as_slice() {
        [c] => c.clone(),
        [c, u] => apply_guidance(&mut Eager, config.cfg_scale, c, u)?,
        _ => unreachable!("one or two guidance branches"),
    };
    Ok((eps, computed, reused))
}

/// Runs the full `T`-step generation from `x_T`.
///
/// With `gates`, blocks follow the hard caching rule and step `T` computes
/// every block to fill the cache, whatever its row says. Each guidance branch
/// owns a separate cache.
pub fn sample(
    model: &DiTModel,
    gates: Option<&GateMatrix>,
    schedule: &NoiseSchedule,
    config: &SamplerConfig,
    x_t: &Tensor,
    classes: &[Option<usize>],
) -> Result<Trajectory> {
    let caches = BranchCaches::new(model.n_blocks(), config);
    sample_from(model, gates, schedule, config, x_t, config.steps, classes, caches)
}

/// Continues a generation from `x_t` at step `t` with the given cache state.
#[allow(clippy::too_many_arguments)]
pub fn sample_from(
    model: &DiTModel,
    gates: Option<&GateMatrix>,
    schedule: &NoiseSchedule,
    config: &SamplerConfig,
    x_t: &Tensor,
    t: usize,
    classes: &[Option<usize>],
    mut caches: BranchCaches,
) -> Result<Trajectory> {
    config.validate(schedule.train_steps())?;
    let n = model.n_blocks();
    if let Some(g) = gates {
        if g.steps() != config.steps {
            return Err(Error::dim("router steps vs sampler steps", &[g.steps()], &[config.steps]));
        }
        if g.blocks() != n {
            return Err(Error::dim("router blocks vs model blocks", &[g.blocks()], &[n]));
        }
    }
    if t > config.steps {
        return Err(Error::IndexOutOfRange {
            what: "timestep",
            index: t,
            limit: config.steps,
        });
    }
    let prefill = vec![1.0; n];
    let mut x = x_t.clone();
    let mut states = vec![x.clone()];
    let mut records = Vec::with_capacity(t);
    for t in (1..=t).rev() {
        let row = gates.map(|g| {
            let r = if t == config.steps { &prefill[..] } else { g.row(t) };
            (r, g.tau())
        });
        let (eps, computed, reused) = predict(model, schedule, config, &x, t, classes, row, &mut caches)?;
        x = config.advance(schedule, &x, t, &eps)?;
        states.push(x.clone());
        records.push(StepRecord {
            t,
            train_step: config.train_step(schedule, t),
            eps,
            computed,
            reused,
        });
    }
    Ok(Trajectory {
        start: t,
        states,
        records,
    })
}

/// One row of a per-step trace dump.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub t: usize,
    pub mse: Option<f64>,
    pub lambda: Option<f64>,
}

/// CSV with header `t,mse,lambda`; absent values are left empty.
pub fn trace_csv(rows: &[TraceRow]) -> String {
    let cell = |v: Option<f64>| v.map(|v| format!("{v:e}")).unwrap_or_default();
    let mut out = String::from("t,mse,lambda\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.t, cell(r.mse), cell(r.lambda)));
    }
    out
}
