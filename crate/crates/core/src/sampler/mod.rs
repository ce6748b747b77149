//! Noise schedule, deterministic DDIM and Euler solvers, and full cached
//! generation with classifier-free guidance.

mod sample;
mod schedule;

pub use sample::{
    apply_guidance, branch_classes, gaussian, predict, sample_from, BranchCaches, gaussian_from, sample, trace_csv, SamplerConfig, SamplerKind, StepRecord, TraceRow,
    Trajectory,
};
pub use schedule::{ddim_step, euler_step, make_schedule, NoiseSchedule, Spacing, BETA_END, BETA_START, DEFAULT_TRAIN_STEPS};
