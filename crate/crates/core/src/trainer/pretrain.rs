use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::SyntheticDataset;
use super::optim::{AdamConfig, AdamState};
use crate::autodiff::{Backend, Graph, Tensor};
use crate::dit::{Condition, DiTModel, Plain};
use crate::error::{Error, Result};
use crate::sampler::{gaussian_from, NoiseSchedule};

const HELD_OUT_STREAM: u64 = 0x5eed_0f4e_1d00;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub optimizer: AdamConfig,
    /// Probability of replacing a label with the null class.
    pub class_dropout: f64,
    /// Held-out samples for the final loss.
    pub held_out: usize,
    /// Fail unless the held-out loss ends below this value.
    pub loss_threshold: Option<f64>,
    /// Also measure held-out loss every this many steps (0 disables).
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch: 8,
            optimizer: AdamConfig {
                lr: 2e-3,
                ..AdamConfig::default()
            },
            class_dropout: 0.1,
            held_out: 64,
            loss_threshold: None,
            eval_every: 0,
            seed: 0,
        }
    }
}

impl PretrainConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.batch == 0 {
            out.push("pretrain.batch: must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.class_dropout) {
            out.push(format!("pretrain.class_dropout: must lie in [0, 1], got {}", self.class_dropout));
        }
        if self.held_out == 0 {
            out.push("pretrain.held_out: must be at least 1".into());
        }
        if let Some(t) = self.loss_threshold {
            if !(t > 0.0) {
                out.push(format!("pretrain.loss_threshold: must be positive, got {t}"));
            }
        }
        out.extend(self.optimizer.violations("pretrain.optimizer"));
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainReport {
    /// Training loss (mean squared noise error) per step.
    pub losses: Vec<f64>,
    /// `(step, held-out loss)` at every evaluation point, ending with the final model.
    pub held_out: Vec<(usize, f64)>,
}

impl PretrainReport {
    pub fn final_held_out(&self) -> f64 {
        self.held_out.last().map(|e| e.1).unwrap_or(f64::NAN)
    }
}

/// Noisy inputs at one shared training step, with their noise targets.
struct NoiseBatch {
    x: Tensor,
    eps: Tensor,
    cond: Condition,
}

fn draw_batch(
    dataset: &SyntheticDataset,
    schedule: &NoiseSchedule,
    n: usize,
    dropout: f64,
    rng: &mut ChaCha8Rng,
) -> Result<NoiseBatch> {
    let (x0, classes) = dataset.batch(n, rng);
    let eps = gaussian_from(x0.shape(), rng);
    let s = rng.random_range(1..=schedule.train_steps());
    let x = schedule.add_noise(&x0, &eps, s)?;
    let classes = classes
        .into_iter()
        .map(|c| (rng.random::<f64>() >= dropout).then_some(c))
        .collect();
    Ok(NoiseBatch {
        x,
        eps,
        cond: Condition::new(s, classes),
    })
}

/// `‖ε_θ(x_s) − ε‖²_F / numel`.
fn batch_loss<B: Backend>(be: &mut B, model: &DiTModel, params: &[B::Value], batch: &NoiseBatch) -> Result<B::Value> {
    let out = model.forward_bound(be, params, &batch.x, &batch.cond, &mut Plain)?;
    let target = be.constant(batch.eps.clone())?;
    let sq = be.frobenius_sq(&out, &target)?;
    be.scale(&sq, 1.0 / batch.x.len() as f64)
}

/// Mean held-out loss; every held-out sample carries its own step.
fn held_out_loss(model: &DiTModel, set: &[NoiseBatch]) -> Result<f64> {
    let mut be = crate::autodiff::Eager;
    let params = model.bind(&mut be)?;
    let mut total = 0.0;
    for b in set {
        total += batch_loss(&mut be, model, &params, b)?.item();
    }
    Ok(total / set.len() as f64)
}

/// Trains `model` in place as a noise predictor on `dataset`.
///
/// Zero steps leave the model untouched. The held-out set is drawn from a
/// stream independent of the training stream.
pub fn pretrain_teacher(
    model: &mut DiTModel,
    dataset: &SyntheticDataset,
    schedule: &NoiseSchedule,
    config: &PretrainConfig,
) -> Result<PretrainReport> {
    let v = config.violations();
    if !v.is_empty() {
        return Err(Error::Config(v.join("; ")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut hrng = ChaCha8Rng::seed_from_u64(config.seed ^ HELD_OUT_STREAM);
    let held = (0..config.held_out)
        .map(|_| draw_batch(dataset, schedule, 1, 0.0, &mut hrng))
        .collect::<Result<Vec<_>>>()?;
    let mut states: Vec<AdamState> = model.params().iter().map(|p| AdamState::new(p.len())).collect();
    let mut losses = Vec::with_capacity(config.steps);
    let mut held_out = Vec::new();
    model.set_trainable(true);
    for step in 0..config.steps {
        if config.eval_every > 0 && step % config.eval_every == 0 {
            held_out.push((step, held_out_loss(model, &held)?));
        }
        let batch = draw_batch(dataset, schedule, config.batch, config.class_dropout, &mut rng)?;
        let mut g = Graph::new();
        let params = model.bind(&mut g)?;
        let loss = batch_loss(&mut g, model, &params, &batch)?;
        let value = g.value(loss).item();
        if !value.is_finite() {
            model.set_trainable(false);
            return Err(Error::Numeric(format!("teacher pretraining diverged at step {step}: loss {value}")));
        }
        losses.push(value);
        let grads = g.backward(loss)?;
        for ((p, var), state) in model.params_mut().iter_mut().zip(&params).zip(&mut states) {
            if let Some(gr) = grads.get(*var) {
                state.update(&config.optimizer, p.data_mut(), gr)?;
            }
        }
    }
    model.set_trainable(false);
    held_out.push((config.steps, held_out_loss(model, &held)?));
    let report = PretrainReport { losses, held_out };
    if let Some(th) = config.loss_threshold {
        let fin = report.final_held_out();
        if !(fin < th) {
            return Err(Error::Numeric(format!("teacher held-out loss {fin} did not reach threshold {th}")));
        }
    }
    Ok(report)
}
