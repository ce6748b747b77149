use crate::autodiff::{Backend, Graph, Tensor, UnaryKind};
use crate::dit::{CacheMode, DiTModel, Gates};
use crate::error::{Error, Result};
use crate::sampler::{apply_guidance, branch_classes, predict, BranchCaches, NoiseSchedule, SamplerConfig};

/// Result of one router-row update at a single denoising step.
#[derive(Clone, Debug, PartialEq)]
pub struct RowUpdate {
    /// Soft-cached (student) model output.
    pub eps_student: Tensor,
    /// Plain (teacher) model output on the same input.
    pub eps_teacher: Tensor,
    /// `‖ε' − ε‖²_F`.
    pub mse: f64,
    /// `β · Σ_i r_{t,i}`.
    pub reg: f64,
    /// `λ_t · mse + reg`.
    pub loss: f64,
    /// Gradient of `loss` with respect to the row's logits.
    pub grad: Vec<f64>,
}

/// Soft-cached forward at step `t` with gates `sigmoid(logits)`, compared
/// against the plain forward on the same `x`.
///
/// Cached values enter as constants and the model is frozen, so the only
/// gradient is on `logits`. Caches are updated as in inference: every block
/// whose gate exceeds `tau` overwrites its slot.
#[allow(clippy::too_many_arguments)]
pub fn router_row_step(
    teacher: &DiTModel,
    schedule: &NoiseSchedule,
    sampler: &SamplerConfig,
    x: &Tensor,
    t: usize,
    classes: &[Option<usize>],
    logits: &[f64],
    tau: f64,
    caches: &mut BranchCaches,
    lambda: f64,
    beta: f64,
) -> Result<RowUpdate> {
    let (eps_teacher, _, _) = predict(teacher, schedule, sampler, x, t, classes, None, caches)?;

    let mut g = Graph::new();
    let lv = g.param(&Tensor::new(vec![logits.len()], logits.to_vec())?.with_grad())?;
    let r = g.unary(UnaryKind::Sigmoid, &lv)?;
    let gates = (0..logits.len()).map(|i| g.index(&r, i)).collect::<Result<Vec<_>>>()?;
    let mut outs = Vec::with_capacity(2);
    for (k, cache) in caches.caches_mut().iter_mut().enumerate() {
        let cond = sampler.condition(schedule, t, &branch_classes(classes, k));
        outs.push(teacher.forward_cached(&mut g, x, &cond, Gates::Tracked(&gates), tau, cache, CacheMode::Soft)?);
    }
    let eps_s = match outs.as_slice() {
        [c] => *c,
        [c, u] => apply_guidance(&mut g, sampler.cfg_scale, c, u)?,
        _ => unreachable!("one or two guidance branches"),
    };
    let target = g.constant(eps_teacher.clone())?;
    let mse = g.frobenius_sq(&eps_s, &target)?;
    let weighted = g.scale(&mse, lambda)?;
    let rsum = g.sum(&r)?;
    let reg = g.scale(&rsum, beta)?;
    let loss = g.add(&weighted, &reg)?;

    let (mse_v, reg_v, loss_v) = (g.value(mse).item(), g.value(reg).item(), g.value(loss).item());
    if !loss_v.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss {loss_v} at step {t}")));
    }
    let eps_student = g.value(eps_s).detach();
    let grads = g.backward(loss)?;
    let grad = grads.get(lv).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; logits.len()]);
    Ok(RowUpdate {
        eps_student,
        eps_teacher,
        mse: mse_v,
        reg: reg_v,
        loss: loss_v,
        grad,
    })
}
