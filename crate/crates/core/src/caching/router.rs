use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::kernels::sigmoid;
use crate::error::{Error, Result};

/// Default caching threshold τ.
pub const DEFAULT_TAU: f64 = 0.1;

/// Normal initialization of router logits.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouterInit {
    pub mean: f64,
    pub std: f64,
}

impl Default for RouterInit {
    /// Mean 1.1 puts initial gates near 0.75, above any sensible τ.
    fn default() -> Self {
        Self { mean: 1.1, std: 0.1 }
    }
}

/// Learned caching policy: a `T × N` matrix of logits whose sigmoids are the
/// gates `r_{t,i}`, plus the threshold τ. Row `t = T` is the pre-fill step and
/// always reads as all ones.
#[derive(Clone, Debug, PartialEq)]
pub struct Router {
    steps: usize,
    blocks: usize,
    tau: f64,
    /// Row-major, row `t - 1` holds timestep `t`.
    logits: Vec<f64>,
}

impl Router {
    pub fn from_logits(steps: usize, blocks: usize, tau: f64, logits: Vec<f64>) -> Result<Self> {
        if steps == 0 || blocks == 0 {
            return Err(Error::Config(format!("router needs T ≥ 1 and N ≥ 1, got T={steps}, N={blocks}")));
        }
        if !(0.0..1.0).contains(&tau) {
            return Err(Error::Config(format!("tau must lie in [0, 1), got {tau}")));
        }
        if logits.len() != steps * blocks {
            return Err(Error::dim("router logits", &[logits.len()], &[steps, blocks]));
        }
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "router logits" });
        }
        Ok(Self { steps, blocks, tau, logits })
    }

    pub fn constant(steps: usize, blocks: usize, tau: f64, logit: f64) -> Result<Self> {
        Self::from_logits(steps, blocks, tau, vec![logit; steps * blocks])
    }

    pub fn random(steps: usize, blocks: usize, tau: f64, init: RouterInit, seed: u64) -> Result<Self> {
        let dist = Normal::new(init.mean, init.std)
            .map_err(|e| Error::Config(format!("router init: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let logits = (0..steps * blocks).map(|_| dist.sample(&mut rng)).collect();
        Self::from_logits(steps, blocks, tau, logits)
    }

    /// `T`, the number of denoising steps.
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// `N`, the number of cacheable blocks.
    pub fn blocks(&self) -> usize {
        self.blocks
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps {
            return Err(Error::IndexOutOfRange {
                what: "timestep",
                index: t,
                limit: self.steps,
            });
        }
        Ok(())
    }

    pub fn logit_row(&self, t: usize) -> Result<&[f64]> {
        self.check_t(t)?;
        Ok(&self.logits[(t - 1) * self.blocks..t * self.blocks])
    }

    pub fn logit_row_mut(&mut self, t: usize) -> Result<&mut [f64]> {
        self.check_t(t)?;
        let n = self.blocks;
        Ok(&mut self.logits[(t - 1) * n..t * n])
    }

    /// `r_{t,i}`: sigmoid of the logit, or exactly 1 on the pre-fill row.
    pub fn gate(&self, t: usize, i: usize) -> Result<f64> {
        self.check_t(t)?;
        if i >= self.blocks {
            return Err(Error::IndexOutOfRange {
                what: "block",
                index: i,
                limit: self.blocks,
            });
        }
        if t == self.steps {
            return Ok(1.0);
        }
        Ok(sigmoid(self.logits[(t - 1) * self.blocks + i]))
    }

    pub fn gates(&self) -> GateMatrix {
        let mut values: Vec<f64> = self.logits.iter().map(|&l| sigmoid(l)).collect();
        let n = self.blocks;
        values[(self.steps - 1) * n..].iter_mut().for_each(|v| *v = 1.0);
        GateMatrix {
            steps: self.steps,
            blocks: n,
            tau: self.tau,
            values,
        }
    }

    pub fn check_blocks(&self, n_blocks: usize) -> Result<()> {
        if self.blocks != n_blocks {
            return Err(Error::dim("router blocks vs model blocks", &[self.blocks], &[n_blocks]));
        }
        Ok(())
    }

    /// Cache usage ratio of this router.
    pub fn cur(&self) -> f64 {
        self.gates().cur()
    }
}

/// Effective gate values `r_{t,i}` for every step, with the threshold that
/// turns them into compute/reuse decisions.
#[derive(Clone, Debug, PartialEq)]
pub struct GateMatrix {
    steps: usize,
    blocks: usize,
    tau: f64,
    values: Vec<f64>,
}

impl GateMatrix {
    pub fn from_values(steps: usize, blocks: usize, tau: f64, values: Vec<f64>) -> Result<Self> {
        if values.len() != steps * blocks {
            return Err(Error::dim("gate matrix", &[values.len()], &[steps, blocks]));
        }
        if values.iter().any(|&v| !(v > 0.0 && v <= 1.0)) {
            return Err(Error::Config("gate values must lie in (0, 1]".into()));
        }
        Ok(Self { steps, blocks, tau, values })
    }

    /// Every gate 1: all blocks computed at every step.
    pub fn all_compute(steps: usize, blocks: usize, tau: f64) -> Self {
        Self {
            steps,
            blocks,
            tau,
            values: vec![1.0; steps * blocks],
        }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn blocks(&self) -> usize {
        self.blocks
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[(t - 1) * self.blocks..t * self.blocks]
    }

    pub fn get(&self, t: usize, i: usize) -> f64 {
        self.values[(t - 1) * self.blocks + i]
    }

    pub fn is_cached(&self, t: usize, i: usize) -> bool {
        self.get(t, i) <= self.tau
    }

    pub fn cached_count(&self) -> usize {
        self.values.iter().filter(|&&v| v <= self.tau).count()
    }

    pub fn row_cached_count(&self, t: usize) -> usize {
        self.row(t).iter().filter(|&&v| v <= self.tau).count()
    }

    /// Fraction of `(t, i)` cells served from cache, over all `N·T` cells.
    pub fn cur(&self) -> f64 {
        self.cached_count() as f64 / (self.steps * self.blocks) as f64
    }

    /// FLOP ratio of uncached over cached execution given per-block costs.
    pub fn theoretical_speedup(&self, cost: &[f64]) -> Result<f64> {
        if cost.is_empty() {
            return Err(Error::Config("block cost vector is empty".into()));
        }
        if cost.len() != self.blocks {
            return Err(Error::dim("block costs", &[cost.len()], &[self.blocks]));
        }
        if cost.iter().any(|&c| !(c > 0.0 && c.is_finite())) {
            return Err(Error::Config("block costs must be positive".into()));
        }
        let full: f64 = self.steps as f64 * cost.iter().sum::<f64>();
        let mut executed = 0.0;
        for t in 1..=self.steps {
            for (i, c) in cost.iter().enumerate() {
                if !self.is_cached(t, i) {
                    executed += c;
                }
            }
        }
        Ok(full / executed)
    }

    /// 0/1 grid (1 = served from cache), `t = T` first.
    pub fn cache_grid(&self) -> Vec<Vec<u8>> {
        (1..=self.steps)
            .rev()
            .map(|t| (0..self.blocks).map(|i| u8::from(self.is_cached(t, i))).collect())
            .collect()
    }

    /// Grid as CSV: header `t,b0,…,b{N-1}`, then one row per step from `T` to 1.
    pub fn grid_csv(&self) -> String {
        let mut out = String::from("t");
        for i in 0..self.blocks {
            out.push_str(&format!(",b{i}"));
        }
        out.push('\n');
        for (k, row) in self.cache_grid().iter().enumerate() {
            out.push_str(&(self.steps - k).to_string());
            for v in row {
                out.push(',');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }
}

pub fn cur(router: &Router) -> f64 {
    router.cur()
}

pub fn theoretical_speedup(router: &Router, cost: &[f64]) -> Result<f64> {
    router.gates().theoretical_speedup(cost)
}
