use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::caching::GateMatrix;
use crate::dit::DiTModel;
use crate::error::{Error, Result};
use crate::sampler::{gaussian, sample, NoiseSchedule, SamplerConfig, Trajectory};
use crate::trainer::cond_stream;

/// Shared evaluation inputs: one `x_T` batch and label set per seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSet {
    pub seeds: Vec<u64>,
    pub batch: usize,
}

impl Default for EvalSet {
    fn default() -> Self {
        Self {
            seeds: (0..8).map(|s| 10_000 + s).collect(),
            batch: 8,
        }
    }
}

impl EvalSet {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("eval.seeds: at least one seed is required".into()));
        }
        if self.batch == 0 {
            return Err(Error::Config("eval.batch: must be at least 1".into()));
        }
        Ok(())
    }

    /// `x_T` and labels of the `k`-th seed.
    pub fn inputs(&self, model: &DiTModel, k: usize) -> (Tensor, Vec<Option<usize>>) {
        let x = gaussian(&model.config().image_shape(self.batch), self.seeds[k]);
        (x, cond_stream(k, self.batch, model.config().n_classes))
    }

    /// Uncached reference trajectories, one per seed.
    pub fn teacher_runs(&self, model: &DiTModel, schedule: &NoiseSchedule, sampler: &SamplerConfig) -> Result<Vec<Trajectory>> {
        self.validate()?;
        (0..self.seeds.len())
            .map(|k| {
                let (x, classes) = self.inputs(model, k);
                sample(model, None, schedule, sampler, &x, &classes)
            })
            .collect()
    }

    /// Cached trajectories under `gates`, one per seed.
    pub fn student_runs(
        &self,
        model: &DiTModel,
        gates: &GateMatrix,
        schedule: &NoiseSchedule,
        sampler: &SamplerConfig,
    ) -> Result<Vec<Trajectory>> {
        self.validate()?;
        (0..self.seeds.len())
            .map(|k| {
                let (x, classes) = self.inputs(model, k);
                sample(model, Some(gates), schedule, sampler, &x, &classes)
            })
            .collect()
    }
}

/// `curve[t]` = mean over runs of `‖x_t(student) − x_t(teacher)‖²_F`, for `t = 0..=T`.
pub fn mse_curve(teacher: &[Trajectory], student: &[Trajectory]) -> Result<Vec<f64>> {
    if teacher.is_empty() {
        return Err(Error::Config("trajectory error needs at least one seed".into()));
    }
    if teacher.len() != student.len() {
        return Err(Error::dim("trajectory runs", &[student.len()], &[teacher.len()]));
    }
    let steps = teacher[0].start();
    let mut curve = vec![0.0; steps + 1];
    for (a, b) in teacher.iter().zip(student) {
        for (t, c) in curve.iter_mut().enumerate() {
            *c += b.x(t).frobenius_sq(a.x(t))?;
        }
    }
    let n = teacher.len() as f64;
    curve.iter_mut().for_each(|c| *c /= n);
    Ok(curve)
}

/// Per-seed final-sample errors `‖x_0(student) − x_0(teacher)‖²_F`.
pub fn final_errors(teacher: &[Trajectory], student: &[Trajectory]) -> Result<Vec<f64>> {
    teacher.iter().zip(student).map(|(a, b)| b.x0().frobenius_sq(a.x0())).collect()
}

/// Per-step trajectory error of cached sampling under `gates` against plain
/// sampling from the same `x_T`, averaged over the evaluation seeds.
pub fn trajectory_mse(
    model: &DiTModel,
    gates: &GateMatrix,
    schedule: &NoiseSchedule,
    sampler: &SamplerConfig,
    set: &EvalSet,
) -> Result<Vec<f64>> {
    let teacher = set.teacher_runs(model, schedule, sampler)?;
    let student = set.student_runs(model, gates, schedule, sampler)?;
    mse_curve(&teacher, &student)
}
