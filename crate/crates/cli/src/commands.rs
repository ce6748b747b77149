//! Subcommand bodies. Each reads its inputs through the run directory so
//! their content ids land in the manifest.

use std::path::{Path, PathBuf};

use featcache::caching::Router;
use featcache::dit::{checkpoint, DiTModel};
use featcache::eval::{compare_csv, make_heuristic, EvalReport, HeuristicSchedule};
use featcache::eval::evaluate_against;
use featcache::sampler::{predict, sample, trace_csv, BranchCaches, TraceRow};
use featcache::trainer::{gen_proxy, log_csv, pretrain_teacher, train_router, SyntheticDataset};
use featcache::Tensor;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::run::RunDir;

pub fn pretrain(cfg: &RunConfig, run: &mut RunDir) -> Result<(), CliError> {
    let mut model = DiTModel::new(cfg.model.clone())?;
    let data = SyntheticDataset::new(&cfg.model, cfg.seed);
    let report = pretrain_teacher(&mut model, &data, &cfg.schedule(), &cfg.pretrain)?;
    run.write("teacher.json", checkpoint::to_json(&model)?.as_bytes())?;
    let mut log = String::from("step,loss\n");
    for (k, l) in report.losses.iter().enumerate() {
        log.push_str(&format!("{},{l:e}\n", k + 1));
    }
    run.write("pretrain_log.csv", log.as_bytes())?;
    let mut held = String::from("step,held_out_loss\n");
    for (k, l) in &report.held_out {
        held.push_str(&format!("{k},{l:e}\n"));
    }
    run.write("held_out.csv", held.as_bytes())?;
    println!("final held-out loss {:.6}", report.final_held_out());
    Ok(())
}

pub fn train(cfg: &RunConfig, run: &mut RunDir, teacher: &Path) -> Result<(), CliError> {
    let model = load_teacher(cfg, run, teacher)?;
    let outcome = train_router(&model, &cfg.schedule(), &cfg.sampler, &cfg.train)?;
    run.write("router.json", outcome.router.to_json()?.as_bytes())?;
    run.write("train_log.csv", log_csv(&outcome.log).as_bytes())?;
    let mut proxies = String::from("refreshed_at,t,lambda\n");
    for p in &outcome.proxies {
        for t in (1..=p.lambda.len()).rev() {
            proxies.push_str(&format!("{},{t},{:e}\n", p.refreshed_at, p.get(t)));
        }
    }
    run.write("proxies.csv", proxies.as_bytes())?;
    run.write("grid.csv", outcome.router.gates().grid_csv().as_bytes())?;
    for (updates, r) in &outcome.snapshots {
        run.write(&format!("snapshots/router_{updates:06}.json"), r.to_json()?.as_bytes())?;
    }
    let r = &outcome.router;
    println!(
        "router trained: CUR {:.4}, speedup {:.3}",
        r.cur(),
        featcache::caching::theoretical_speedup(r, &model.block_flops())?
    );
    Ok(())
}

#[derive(Serialize)]
struct SampleDump {
    seed: u64,
    classes: Vec<Option<usize>>,
    shape: Vec<usize>,
    x0: Vec<f64>,
}

pub fn sample_cmd(cfg: &RunConfig, run: &mut RunDir, teacher: &Path, router: Option<&Path>) -> Result<(), CliError> {
    let model = load_teacher(cfg, run, teacher)?;
    let router = router.map(|p| load_router(cfg, run, "router", p, &model)).transpose()?;
    let gates = router.as_ref().map(Router::gates);
    let schedule = cfg.schedule();
    let set = cfg.eval.set();
    let mut dumps = Vec::with_capacity(set.seeds.len());
    for (k, &seed) in set.seeds.iter().enumerate() {
        let (x, classes) = set.inputs(&model, k);
        let traj = sample(&model, gates.as_ref(), &schedule, &cfg.sampler, &x, &classes)?;
        let reference = match gates {
            Some(_) => Some(sample(&model, None, &schedule, &cfg.sampler, &x, &classes)?),
            None => None,
        };
        let rows: Vec<TraceRow> = (0..=cfg.sampler.steps)
            .rev()
            .map(|t| TraceRow {
                t,
                mse: reference.as_ref().map(|r| sq_dist(traj.x(t), r.x(t))),
                lambda: None,
            })
            .collect();
        run.write(&format!("trajectory_{seed}.csv"), trace_csv(&rows).as_bytes())?;
        dumps.push(SampleDump {
            seed,
            classes,
            shape: traj.x0().shape().to_vec(),
            x0: traj.x0().data().to_vec(),
        });
    }
    run.write("samples.json", pretty(&dumps)?.as_bytes())?;
    Ok(())
}

pub fn eval(cfg: &RunConfig, run: &mut RunDir, teacher: &Path, routers: &[PathBuf]) -> Result<(), CliError> {
    let model = load_teacher(cfg, run, teacher)?;
    let schedule = cfg.schedule();
    let set = cfg.eval.set();
    let mut candidates = Vec::new();
    for (k, path) in routers.iter().enumerate() {
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let name = format!("{k}_{stem}");
        let router = load_router(cfg, run, &format!("router[{k}]"), path, &model)?;
        candidates.push((name, router));
    }
    for h in &cfg.eval.heuristics {
        let router = make_heuristic(*h, cfg.sampler.steps, model.n_blocks(), cfg.train.tau)?;
        candidates.push((heuristic_name(h), router));
    }
    if candidates.is_empty() {
        return Err(CliError::Config(vec![
            "eval: pass at least one --router or list eval.heuristics".into(),
        ]));
    }
    let reference = set.teacher_runs(&model, &schedule, &cfg.sampler)?;
    let mut reports: Vec<EvalReport> = Vec::new();
    for (name, router) in &candidates {
        let report = evaluate_against(name, &model, router, &schedule, &cfg.sampler, &set, &reference)?;
        run.write(&format!("reports/{name}.json"), report.to_json()?.as_bytes())?;
        run.write(&format!("reports/{name}_curve.csv"), report.curve_csv().as_bytes())?;
        run.write(&format!("reports/{name}_grid.csv"), router.gates().grid_csv().as_bytes())?;
        println!(
            "{name}: CUR {:.4} speedup {:.3} final MSE {:.6e} ± {:.3e}",
            report.cur, report.speedup, report.final_mse_mean, report.final_mse_sd
        );
        reports.push(report);
    }
    run.write("compare.csv", compare_csv(&reports).as_bytes())?;
    Ok(())
}

/// Per-step `L_MSE` along the cached trajectory of the first eval seed, with
/// the proxy `λ` computed from the same `x_T`.
pub fn proxy_trace(cfg: &RunConfig, run: &mut RunDir, teacher: &Path, router: &Path) -> Result<(), CliError> {
    let model = load_teacher(cfg, run, teacher)?;
    let router = load_router(cfg, run, "router", router, &model)?;
    let schedule = cfg.schedule();
    let (x, classes) = cfg.eval.set().inputs(&model, 0);
    let proxy = gen_proxy(&model, &schedule, &cfg.sampler, &x, &classes, &router, cfg.train.proxy_metric)?;
    let traj = sample(&model, Some(&router.gates()), &schedule, &cfg.sampler, &x, &classes)?;
    let mut out = String::from("t,l_mse,lambda\n");
    for t in (1..=cfg.sampler.steps).rev() {
        let mut fresh = BranchCaches::new(model.n_blocks(), &cfg.sampler);
        let (plain, _, _) = predict(&model, &schedule, &cfg.sampler, traj.x(t), t, &classes, None, &mut fresh)?;
        let l_mse = sq_dist(&traj.record(t).eps, &plain);
        out.push_str(&format!("{t},{l_mse:e},{:e}\n", proxy.get(t)));
    }
    run.write("proxy_trace.csv", out.as_bytes())?;
    Ok(())
}

fn load_teacher(cfg: &RunConfig, run: &mut RunDir, path: &Path) -> Result<DiTModel, CliError> {
    let model = checkpoint::from_json(&run.read_input("teacher", path)?)?;
    let mut expected = cfg.model.clone();
    expected.seed = model.config().seed;
    if *model.config() != expected {
        return Err(CliError::Input(format!(
            "teacher {} was built with a different [model] section",
            path.display()
        )));
    }
    Ok(model)
}

fn load_router(cfg: &RunConfig, run: &mut RunDir, role: &str, path: &Path, model: &DiTModel) -> Result<Router, CliError> {
    let router = Router::from_json(&run.read_input(role, path)?)?;
    router.check_blocks(model.n_blocks())?;
    if router.steps() != cfg.sampler.steps {
        return Err(CliError::Input(format!(
            "router {} has T = {}, sampler.steps is {}",
            path.display(),
            router.steps(),
            cfg.sampler.steps
        )));
    }
    Ok(router)
}

fn heuristic_name(h: &HeuristicSchedule) -> String {
    match *h {
        HeuristicSchedule::ForaUniform { k } => format!("fora_k{k}"),
        HeuristicSchedule::Alternating => "alternating".into(),
        HeuristicSchedule::Random { target_cur, seed } => format!("random_{target_cur}_s{seed}"),
    }
}

fn sq_dist(a: &Tensor, b: &Tensor) -> f64 {
    featcache::autodiff::kernels::frobenius_sq(a.data(), b.data())
}

fn pretty<T: Serialize>(value: &T) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(featcache::Error::from)?;
    s.push('\n');
    Ok(s)
}
