#![allow(dead_code)]

use featcache::dit::{BlockPolicy, Condition, DiTConfig, DiTModel};
use featcache::sampler::{ddim_step, NoiseSchedule, SamplerConfig};
use featcache::{Eager, Result, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Small model with every parameter perturbed so no output is trivially zero.
pub fn tiny(depth: usize, seed: u64) -> DiTModel {
    let cfg = DiTConfig {
        d_model: 8,
        n_heads: 2,
        depth,
        seed,
        ..DiTConfig::default()
    };
    perturbed(DiTModel::new(cfg).unwrap(), seed, 0.2)
}

pub fn perturbed(mut model: DiTModel, seed: u64, scale: f64) -> DiTModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
    let n = Normal::new(0.0, scale).unwrap();
    for p in model.params_mut() {
        for v in p.data_mut() {
            *v += n.sample(&mut rng);
        }
    }
    model
}

pub fn classes(batch: usize) -> Vec<Option<usize>> {
    (0..batch).map(|j| Some(j % 4)).collect()
}

/// Reference caching rule written out directly: compute when the gate
/// exceeds τ and store the result, otherwise return the stored value.
pub struct HandCache {
    pub slots: Vec<Option<Tensor>>,
    pub computed: usize,
}

impl HandCache {
    pub fn new(n: usize) -> Self {
        Self {
            slots: vec![None; n],
            computed: 0,
        }
    }

    pub fn step<'a>(&'a mut self, gates: &'a [f64], tau: f64) -> HandStep<'a> {
        HandStep { cache: self, gates, tau }
    }
}

pub struct HandStep<'a> {
    cache: &'a mut HandCache,
    gates: &'a [f64],
    tau: f64,
}

impl BlockPolicy<Eager> for HandStep<'_> {
    fn block_output(
        &mut self,
        be: &mut Eager,
        i: usize,
        _shape: &[usize],
        compute: &mut dyn FnMut(&mut Eager) -> Result<Tensor>,
    ) -> Result<Tensor> {
        if self.gates[i] > self.tau {
            let b = compute(be)?;
            self.cache.slots[i] = Some(b.clone());
            self.cache.computed += 1;
            Ok(b)
        } else {
            Ok(self.cache.slots[i].clone().expect("hand cache slot filled"))
        }
    }
}

/// Hand-stepped DDIM generation (w = 1) under a gate matrix given as rows
/// `rows[t - 1]`; row T is replaced by ones. Returns every state `x_T … x_0`.
pub fn hand_generate(
    model: &DiTModel,
    schedule: &NoiseSchedule,
    sampler: &SamplerConfig,
    rows: &[Vec<f64>],
    tau: f64,
    x_t: &Tensor,
    classes: &[Option<usize>],
) -> Vec<Tensor> {
    let steps = sampler.steps;
    let n = model.n_blocks();
    let mut cache = HandCache::new(n);
    let mut x = x_t.clone();
    let mut states = vec![x.clone()];
    for t in (1..=steps).rev() {
        let ones = vec![1.0; n];
        let row = if t == steps { &ones } else { &rows[t - 1] };
        let s_hi = (t as f64 * schedule.train_steps() as f64 / steps as f64).round() as usize;
        let s_lo = ((t - 1) as f64 * schedule.train_steps() as f64 / steps as f64).round() as usize;
        let cond = Condition::new(s_hi, classes.to_vec());
        let eps = model
            .forward_with(&mut Eager, &x, &cond, &mut cache.step(row, tau))
            .unwrap();
        x = ddim_step(schedule, &x, s_hi, s_lo, &eps).unwrap();
        states.push(x.clone());
    }
    states
}

pub fn sq_dist(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
