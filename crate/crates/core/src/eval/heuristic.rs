use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::caching::Router;
use crate::error::{Error, Result};

/// Logit magnitude used to materialize hand-made schedules; its sigmoid is
/// within 3e-9 of 0 or 1, far from any threshold.
pub const HARD_LOGIT: f64 = 20.0;

/// Hand-made caching schedules.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum HeuristicSchedule {
    /// Compute every block on steps with `(T − t) mod k = 0`, reuse all otherwise.
    ForaUniform { k: usize },
    /// Reuse block `i` at step `t` when `t + i` is odd (never at `T`).
    Alternating,
    /// Uniformly chosen cells below `T` reused, `round(target·N·T)` of them.
    Random { target_cur: f64, seed: u64 },
}

pub fn make_heuristic(kind: HeuristicSchedule, steps: usize, blocks: usize, tau: f64) -> Result<Router> {
    let cached = match kind {
        HeuristicSchedule::ForaUniform { k } => {
            if k == 0 {
                return Err(Error::Config("fora_uniform needs k >= 1".into()));
            }
            (1..=steps)
                .flat_map(|t| std::iter::repeat_n((steps - t) % k != 0, blocks))
                .collect::<Vec<_>>()
        }
        HeuristicSchedule::Alternating => (1..=steps)
            .flat_map(|t| (0..blocks).map(move |i| t != steps && (t + i) % 2 == 1))
            .collect(),
        HeuristicSchedule::Random { target_cur, seed } => {
            let cells = (target_cur * (steps * blocks) as f64).round();
            let avail = (steps - 1) * blocks;
            if !(target_cur >= 0.0) || cells > avail as f64 {
                return Err(Error::Config(format!(
                    "random schedule target CUR {target_cur} needs more than the {avail} cacheable cells"
                )));
            }
            random_cells(steps, blocks, cells as usize, seed)
        }
    };
    materialize(steps, blocks, tau, &cached)
}

/// Router reusing exactly `count` uniformly chosen cells below the pre-fill row.
pub fn random_router(steps: usize, blocks: usize, tau: f64, count: usize, seed: u64) -> Result<Router> {
    let avail = (steps - 1) * blocks;
    if count > avail {
        return Err(Error::Config(format!("cannot cache {count} of {avail} cacheable cells")));
    }
    materialize(steps, blocks, tau, &random_cells(steps, blocks, count, seed))
}

/// Router caching exactly `count` cells of `router`, chosen in order of
/// increasing logit below the pre-fill row (ties by position). Keeps the
/// learned ranking while fixing the CUR.
pub fn match_cur(router: &Router, count: usize) -> Result<Router> {
    let (steps, blocks) = (router.steps(), router.blocks());
    let avail = (steps - 1) * blocks;
    if count > avail {
        return Err(Error::Config(format!("cannot cache {count} of {avail} cacheable cells")));
    }
    let logits = router.logits();
    let mut order: Vec<usize> = (0..avail).collect();
    order.sort_by(|&a, &b| logits[a].total_cmp(&logits[b]).then(a.cmp(&b)));
    let mut cached = vec![false; steps * blocks];
    for &j in &order[..count] {
        cached[j] = true;
    }
    materialize(steps, blocks, router.tau(), &cached)
}

fn random_cells(steps: usize, blocks: usize, count: usize, seed: u64) -> Vec<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cached = vec![false; steps * blocks];
    for j in sample_indices(&mut rng, (steps - 1) * blocks, count) {
        cached[j] = true;
    }
    cached
}

fn materialize(steps: usize, blocks: usize, tau: f64, cached: &[bool]) -> Result<Router> {
    let logits = cached.iter().map(|&c| if c { -HARD_LOGIT } else { HARD_LOGIT }).collect();
    Router::from_logits(steps, blocks, tau, logits)
}
