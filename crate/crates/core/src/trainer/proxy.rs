use super::config::ProxyMetric;
use crate::autodiff::Tensor;
use crate::caching::{apply_mask, Router};
use crate::dit::DiTModel;
use crate::error::{Error, Result};
use crate::sampler::{predict, sample_from, BranchCaches, NoiseSchedule, SamplerConfig};

/// Probability floor for the KL variant.
pub const KL_FLOOR: f64 = 1e-12;

/// Per-step final-image error proxies `λ_1 … λ_T`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProxyVector {
    /// Index `t − 1` holds `λ_t`.
    pub lambda: Vec<f64>,
    /// Training iteration at which the proxy was computed.
    pub refreshed_at: usize,
}

impl ProxyVector {
    /// `λ ≡ 1`: every step weighted equally.
    pub fn ones(steps: usize) -> Self {
        Self {
            lambda: vec![1.0; steps],
            refreshed_at: 0,
        }
    }

    pub fn get(&self, t: usize) -> f64 {
        self.lambda[t - 1]
    }
}

/// Distance between a final image and its masked counterpart.
pub fn proxy_metric(x0: &Tensor, x0_t: &Tensor, kind: ProxyMetric) -> Result<f64> {
    if x0.shape() != x0_t.shape() {
        return Err(Error::dim("proxy metric", x0.shape(), x0_t.shape()));
    }
    match kind {
        ProxyMetric::Fro => x0.frobenius_sq(x0_t),
        ProxyMetric::L1 => Ok(x0.data().iter().zip(x0_t.data()).map(|(a, b)| (a - b).abs()).sum()),
        ProxyMetric::Kl => {
            let batch = x0.shape().first().copied().unwrap_or(1).max(1);
            let per = x0.len() / batch;
            let mut total = 0.0;
            for b in 0..batch {
                let p = to_distribution(&x0.data()[b * per..(b + 1) * per])?;
                let q = to_distribution(&x0_t.data()[b * per..(b + 1) * per])?;
                total += p.iter().zip(&q).map(|(p, q)| p * (p / q).ln()).sum::<f64>();
            }
            Ok(total)
        }
    }
}

/// Min-shifted, sum-normalized, floored copy of one image.
fn to_distribution(x: &[f64]) -> Result<Vec<f64>> {
    let min = x.iter().copied().fold(f64::INFINITY, f64::min);
    let mass: f64 = x.iter().map(|v| v - min).sum();
    if !(mass > 0.0) {
        return Err(Error::Numeric("kl proxy: image normalizes to zero mass".into()));
    }
    Ok(x.iter().map(|v| ((v - min) / mass).max(KL_FLOOR)).collect())
}

/// Generates `x_0` under `router`, then once per step `t < T` with caching
/// disabled at `t`, and scores each difference. `λ_T` is 0 because the
/// pre-fill step never reads the cache. Runs without a gradient graph.
///
/// A masked generation agrees with the unmasked one on every step above `t`,
/// so it resumes from the unmasked state and caches at `t`.
pub fn gen_proxy(
    model: &DiTModel,
    schedule: &NoiseSchedule,
    sampler: &SamplerConfig,
    x_t: &Tensor,
    classes: &[Option<usize>],
    router: &Router,
    metric: ProxyMetric,
) -> Result<ProxyVector> {
    let steps = router.steps();
    let n = model.n_blocks();
    router.check_blocks(n)?;
    let gates = router.gates();
    let mut caches = BranchCaches::new(n, sampler);
    let mut x = x_t.clone();
    let mut resume = Vec::with_capacity(steps);
    let prefill = vec![1.0; n];
    for t in (1..=steps).rev() {
        resume.push((x.clone(), caches.clone()));
        let row = if t == steps { &prefill[..] } else { gates.row(t) };
        let (eps, _, _) = predict(model, schedule, sampler, &x, t, classes, Some((row, gates.tau())), &mut caches)?;
        x = sampler.advance(schedule, &x, t, &eps)?;
    }
    let mut lambda = vec![0.0; steps];
    for t in (1..steps).rev() {
        let masked = apply_mask(router, t)?;
        let (x_at, caches_at) = resume[steps - t].clone();
        let traj = sample_from(model, Some(&masked), schedule, sampler, &x_at, t, classes, caches_at)?;
        lambda[t - 1] = proxy_metric(&x, traj.x0(), metric)?;
    }
    Ok(ProxyVector {
        lambda,
        refreshed_at: 0,
    })
}
