use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{LtcSampling, Objective, Paradigm, TrainConfig};
use super::data::SyntheticDataset;
use super::log::LogRow;
use super::optim::AdamState;
use super::proxy::{gen_proxy, ProxyVector};
use super::step::{router_row_step, RowUpdate};
use crate::autodiff::Tensor;
use crate::caching::Router;
use crate::dit::DiTModel;
use crate::error::{Error, Result};
use crate::sampler::{gaussian_from, predict, BranchCaches, NoiseSchedule, SamplerConfig};

const NOISE_STREAM: u64 = 0x6e6f_6973_65;
const DATA_STREAM: u64 = 0x6461_7461;

/// Everything produced by a router training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub router: Router,
    pub log: Vec<LogRow>,
    /// Every proxy refresh, in order.
    pub proxies: Vec<ProxyVector>,
    /// `(row updates so far, router)` every `checkpoint_every` updates.
    pub snapshots: Vec<(usize, Router)>,
}

/// Initial router for `config`: normal logits seeded by `config.seed`.
pub fn initial_router(model: &DiTModel, sampler: &SamplerConfig, config: &TrainConfig) -> Result<Router> {
    Router::random(sampler.steps, model.n_blocks(), config.tau, config.init, config.seed)
}

/// Class labels of trajectory `i`: class ids cycled across the batch.
pub fn cond_stream(i: usize, batch: usize, n_classes: usize) -> Vec<Option<usize>> {
    (0..batch).map(|j| Some((i * batch + j) % n_classes)).collect()
}

/// Trains a router from its seeded initialization with the configured paradigm.
pub fn train_router(
    teacher: &DiTModel,
    schedule: &NoiseSchedule,
    sampler: &SamplerConfig,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let router = initial_router(teacher, sampler, config)?;
    match config.paradigm {
        Paradigm::Sdt => sdt_train_from(teacher, schedule, sampler, config, router),
        Paradigm::Ltc => {
            let data = SyntheticDataset::new(teacher.config(), config.seed ^ DATA_STREAM);
            ltc_train_from(teacher, schedule, sampler, config, &data, router)
        }
    }
}

/// Step-wise denoising training from its seeded initialization.
pub fn sdt_train(
    teacher: &DiTModel,
    schedule: &NoiseSchedule,
    sampler: &SamplerConfig,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let router = initial_router(teacher, sampler, config)?;
    sdt_train_from(teacher, schedule, sampler, config, router)
}

/// Learning-to-cache paradigm from its seeded initialization.
pub fn ltc_train(
    teacher: &DiTModel,
    schedule: &NoiseSchedule,
    sampler: &SamplerConfig,
    config: &TrainConfig,
    data: &SyntheticDataset,
) -> Result<TrainOutcome> {
    let router = initial_router(teacher, sampler, config)?;
    ltc_train_from(teacher, schedule, sampler, config, data, router)
}

/// Shared optimizer and bookkeeping state of both paradigms.
struct Run<'a> {
    config: &'a TrainConfig,
    router: Router,
    rows: Vec<AdamState>,
    log: Vec<LogRow>,
    proxies: Vec<ProxyVector>,
    snapshots: Vec<(usize, Router)>,
    updates: usize,
}

impl<'a> Run<'a> {
    fn new(
        teacher: &DiTModel,
        schedule: &NoiseSchedule,
        sampler: &SamplerConfig,
        config: &'a TrainConfig,
        router: Router,
    ) -> Result<Self> {
        let mut v = config.violations(sampler.steps);
        v.extend(sampler.violations(schedule.train_steps()));
        if !v.is_empty() {
            return Err(Error::Config(v.join("; ")));
        }
        if router.steps() != sampler.steps {
            return Err(Error::dim("router steps vs sampler steps", &[router.steps()], &[sampler.steps]));
        }
        router.check_blocks(teacher.n_blocks())?;
        let rows = (0..router.steps()).map(|_| AdamState::new(router.blocks())).collect();
        Ok(Self {
            config,
            router,
            rows,
            log: Vec::new(),
            proxies: Vec::new(),
            snapshots: Vec::new(),
            updates: 0,
        })
    }

    /// Applies `upd` to row `t` and records it.
    fn apply(&mut self, iter: usize, t: usize, lambda: f64, upd: &RowUpdate) -> Result<()> {
        let row = self.router.logit_row_mut(t)?;
        self.rows[t - 1].update(&self.config.optimizer, row, &upd.grad)?;
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("router row {t} became non-finite at iteration {iter}")));
        }
        self.log.push(LogRow {
            iter,
            t,
            l_mse: upd.mse,
            lambda,
            reg: upd.reg,
            cur: self.router.cur(),
        });
        self.updates += 1;
        let every = self.config.checkpoint_every;
        if every > 0 && self.updates % every == 0 {
            self.snapshots.push((self.updates, self.router.clone()));
        }
        Ok(())
    }

    /// Adds iteration and router state to numeric failures.
    fn diagnose(&self, iter: usize, t: usize, e: Error) -> Error {
        if e.is_numeric() {
            let row = self.router.logit_row(t).map(|r| format!("{r:?}")).unwrap_or_default();
            Error::Numeric(format!("{e}; aborted at iteration {iter}, step {t}, row logits {row}"))
        } else {
            e
        }
    }

    fn finish(self) -> TrainOutcome {
        TrainOutcome {
            router: self.router,
            log: self.log,
            proxies: self.proxies,
            snapshots: self.snapshots,
        }
    }
}

/// Step-wise denoising training starting from `router`.
///
/// Each trajectory draws `x_T`, refreshes the proxy on schedule, pre-fills
/// the cache at `T` and then, for `t = T−1 … 1`, updates row `t` from the
/// soft-cached prediction and advances with the student's (or, under teacher
/// forcing, the teacher's) output.
pub fn sdt_train_from(
    teacher: &DiTModel,
    schedule: &NoiseSchedule,
    sampler: &SamplerConfig,
    config: &TrainConfig,
    router: Router,
) -> Result<TrainOutcome> {
    let mut run = Run::new(teacher, schedule, sampler, config, router)?;
    let steps = sampler.steps;
    let n = teacher.n_blocks();
    let refresh_every = config.interval_c / steps;
    let shape = teacher.config().image_shape(config.batch);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ NOISE_STREAM);
    let mut proxy = ProxyVector::ones(steps);
    let prefill = vec![1.0; n];
    for i in 0..config.iters / steps {
        let mut x = gaussian_from(&shape, &mut rng);
        let classes = cond_stream(i, config.batch, teacher.config().n_classes);
        if config.objective == Objective::Iepo && i % refresh_every == 0 {
            proxy = gen_proxy(teacher, schedule, sampler, &x, &classes, &run.router, config.proxy_metric)
                .map_err(|e| run.diagnose(i, steps, e))?;
            proxy.refreshed_at = i;
            run.proxies.push(proxy.clone());
        }
        let mut caches = BranchCaches::new(n, sampler);
        let (eps, _, _) = predict(teacher, schedule, sampler, &x, steps, &classes, Some((&prefill, config.tau)), &mut caches)?;
        x = sampler.advance(schedule, &x, steps, &eps)?;
        for t in (1..steps).rev() {
            let lambda = proxy.get(t);
            let logits = run.router.logit_row(t)?.to_vec();
            let upd = router_row_step(
                teacher, schedule, sampler, &x, t, &classes, &logits, config.tau, &mut caches, lambda, config.beta,
            )
            .map_err(|e| run.diagnose(i, t, e))?;
            run.apply(i, t, lambda, &upd).map_err(|e| run.diagnose(i, t, e))?;
            let next = if config.teacher_forcing { &upd.eps_teacher } else { &upd.eps_student };
            x = sampler.advance(schedule, &x, t, next)?;
        }
    }
    Ok(run.finish())
}

/// Pre-fill step for one LTC update: `t` in `2..=T`.
fn draw_prefill_step(sampling: LtcSampling, steps: usize, rng: &mut ChaCha8Rng) -> usize {
    match sampling {
        LtcSampling::Even => 2 * rng.random_range(1..=steps / 2),
        LtcSampling::Any => rng.random_range(2..=steps),
    }
}

/// Learning-to-cache paradigm starting from `router`.
///
/// Each update forward-noises a data batch to a sampled step `t`, fills the
/// cache with a full forward there, steps to `x_{t−1}` with that output and
/// trains row `t−1` against the plain prediction on the same `x_{t−1}`.
pub fn ltc_train_from(
    teacher: &DiTModel,
    schedule: &NoiseSchedule,
    sampler: &SamplerConfig,
    config: &TrainConfig,
    data: &SyntheticDataset,
    router: Router,
) -> Result<TrainOutcome> {
    let mut run = Run::new(teacher, schedule, sampler, config, router)?;
    let steps = sampler.steps;
    let n = teacher.n_blocks();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ NOISE_STREAM);
    let mut data_rng = data.stream();
    let mut proxy = ProxyVector::ones(steps);
    let prefill = vec![1.0; n];
    for k in 0..config.iters {
        let t = draw_prefill_step(config.ltc_sampling, steps, &mut rng);
        let (x0, labels) = data.batch(config.batch, &mut data_rng);
        let classes: Vec<Option<usize>> = labels.into_iter().map(Some).collect();
        if config.objective == Objective::Iepo && k % config.interval_c == 0 {
            let x_t = gaussian_from(x0.shape(), &mut rng);
            proxy = gen_proxy(teacher, schedule, sampler, &x_t, &classes, &run.router, config.proxy_metric)
                .map_err(|e| run.diagnose(k, t - 1, e))?;
            proxy.refreshed_at = k;
            run.proxies.push(proxy.clone());
        }
        let noise = gaussian_from(x0.shape(), &mut rng);
        let x_t: Tensor = schedule.add_noise(&x0, &noise, sampler.train_step(schedule, t))?;
        let mut caches = BranchCaches::new(n, sampler);
        let (eps, _, _) = predict(teacher, schedule, sampler, &x_t, t, &classes, Some((&prefill, config.tau)), &mut caches)?;
        let x_prev = sampler.advance(schedule, &x_t, t, &eps)?;
        let row = t - 1;
        let lambda = proxy.get(row);
        let logits = run.router.logit_row(row)?.to_vec();
        let upd = router_row_step(
            teacher, schedule, sampler, &x_prev, row, &classes, &logits, config.tau, &mut caches, lambda, config.beta,
        )
        .map_err(|e| run.diagnose(k, row, e))?;
        run.apply(k, row, lambda, &upd).map_err(|e| run.diagnose(k, row, e))?;
    }
    Ok(run.finish())
}
