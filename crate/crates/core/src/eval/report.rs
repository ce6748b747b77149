use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::trajectory::{final_errors, mse_curve, EvalSet};
use crate::caching::{theoretical_speedup, Router};
use crate::dit::DiTModel;
use crate::error::Result;
use crate::sampler::{NoiseSchedule, SamplerConfig, Trajectory};

/// Measurements of one router against the uncached teacher.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub name: String,
    pub cur: f64,
    pub speedup: f64,
    /// Seconds per generated image under the router; informational only.
    pub wall_clock_per_sample: f64,
    pub final_mse_mean: f64,
    pub final_mse_sd: f64,
    /// `mse_curve[t]` for `t = 0..=T`.
    pub mse_curve: Vec<f64>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Curve as CSV with header `t,mse`, `t = T` first.
    pub fn curve_csv(&self) -> String {
        let mut out = String::from("t,mse\n");
        for t in (0..self.mse_curve.len()).rev() {
            out.push_str(&format!("{t},{:e}\n", self.mse_curve[t]));
        }
        out
    }
}

/// Evaluates `router` against precomputed teacher runs of `set`.
pub fn evaluate_against(
    name: &str,
    model: &DiTModel,
    router: &Router,
    schedule: &NoiseSchedule,
    sampler: &SamplerConfig,
    set: &EvalSet,
    teacher: &[Trajectory],
) -> Result<EvalReport> {
    router.check_blocks(model.n_blocks())?;
    let gates = router.gates();
    let start = Instant::now();
    let student = set.student_runs(model, &gates, schedule, sampler)?;
    let wall = start.elapsed().as_secs_f64() / (set.seeds.len() * set.batch) as f64;
    let errs = final_errors(teacher, &student)?;
    let n = errs.len() as f64;
    let mean = errs.iter().sum::<f64>() / n;
    let sd = if errs.len() > 1 {
        (errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(EvalReport {
        name: name.to_string(),
        cur: router.cur(),
        speedup: theoretical_speedup(router, &model.block_flops())?,
        wall_clock_per_sample: wall,
        final_mse_mean: mean,
        final_mse_sd: sd,
        mse_curve: mse_curve(teacher, &student)?,
    })
}

pub fn evaluate(
    name: &str,
    model: &DiTModel,
    router: &Router,
    schedule: &NoiseSchedule,
    sampler: &SamplerConfig,
    set: &EvalSet,
) -> Result<EvalReport> {
    let teacher = set.teacher_runs(model, schedule, sampler)?;
    evaluate_against(name, model, router, schedule, sampler, set, &teacher)
}

/// Reports ranked by final-sample error (ties keep input order).
pub fn compare(reports: &[EvalReport]) -> Vec<EvalReport> {
    let mut ranked = reports.to_vec();
    ranked.sort_by(|a, b| a.final_mse_mean.total_cmp(&b.final_mse_mean));
    ranked
}

/// Ranked table as CSV: `rank,method,cur,speedup,final_mse_mean,final_mse_sd`.
pub fn compare_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from("rank,method,cur,speedup,final_mse_mean,final_mse_sd\n");
    for (k, r) in compare(reports).iter().enumerate() {
        out.push_str(&format!(
            "{},{},{:.4},{:.4},{:e},{:e}\n",
            k + 1,
            r.name,
            r.cur,
            r.speedup,
            r.final_mse_mean,
            r.final_mse_sd
        ));
    }
    out
}
