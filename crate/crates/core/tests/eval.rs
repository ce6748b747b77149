mod common;

use common::{hand_generate, sq_dist, tiny};
use featcache::caching::{GateMatrix, Router};
use featcache::eval::{
    compare, compare_csv, evaluate, evaluate_against, make_heuristic, match_cur, random_router, trajectory_mse,
    EvalReport, EvalSet, HeuristicSchedule,
};
use featcache::sampler::{make_schedule, SamplerConfig};
use proptest::prelude::*;

fn set(n: usize) -> EvalSet {
    EvalSet {
        seeds: (0..n as u64).map(|s| 500 + s).collect(),
        batch: 2,
    }
}

fn sampler(steps: usize) -> SamplerConfig {
    SamplerConfig {
        steps,
        ..SamplerConfig::default()
    }
}

#[test]
fn all_compute_curve_is_zero() {
    let m = tiny(2, 1);
    let schedule = make_schedule(1000).unwrap();
    let curve = trajectory_mse(&m, &GateMatrix::all_compute(6, 4, 0.1), &schedule, &sampler(6), &set(3)).unwrap();
    assert_eq!(curve.len(), 7);
    assert!(curve.iter().all(|&c| c <= 1e-18), "{curve:?}");
}

#[test]
fn curve_matches_hand_stepped_trajectories() {
    let m = tiny(1, 2);
    let schedule = make_schedule(1000).unwrap();
    let sc = sampler(4);
    let es = set(2);
    let r = Router::from_logits(4, 2, 0.1, vec![-5.0, 3.0, 3.0, -5.0, -5.0, -5.0, 1.0, 1.0]).unwrap();
    let gates = r.gates();
    let curve = trajectory_mse(&m, &gates, &schedule, &sc, &es).unwrap();
    let rows: Vec<Vec<f64>> = (1..=4).map(|t| gates.row(t).to_vec()).collect();
    let ones = vec![vec![1.0; 2]; 4];
    let mut expected = [0.0; 5];
    for k in 0..2 {
        let (x, classes) = es.inputs(&m, k);
        let s = hand_generate(&m, &schedule, &sc, &rows, 0.1, &x, &classes);
        let p = hand_generate(&m, &schedule, &sc, &ones, 0.1, &x, &classes);
        // states run x_T … x_0, curve is indexed by t
        for t in 0..=4 {
            expected[t] += sq_dist(&s[4 - t], &p[4 - t]) / 2.0;
        }
    }
    // the pre-fill step computes everything, so x_{T-1} agrees exactly
    assert_eq!(curve[4], 0.0);
    assert_eq!(curve[3], 0.0);
    for t in 0..=2 {
        assert!(expected[t] > 0.0);
        assert!((curve[t] - expected[t]).abs() <= 1e-9 * expected[t], "t={t}");
    }
}

#[test]
fn half_cached_random_router_has_positive_final_error() {
    let m = tiny(2, 3);
    let schedule = make_schedule(1000).unwrap();
    for seed in 0..5 {
        let r = random_router(8, 4, 0.1, 16, seed).unwrap();
        let curve = trajectory_mse(&m, &r.gates(), &schedule, &sampler(8), &set(2)).unwrap();
        assert!(curve[1] > 0.0 && curve[0] > 0.0, "seed {seed}");
    }
}

#[test]
fn report_cur_and_speedup_come_from_the_router() {
    let m = tiny(2, 4);
    let schedule = make_schedule(1000).unwrap();
    let r = random_router(8, 4, 0.1, 9, 2).unwrap();
    let rep = evaluate("r", &m, &r, &schedule, &sampler(8), &set(2)).unwrap();
    assert_eq!(rep.cur, r.cur());
    assert_eq!(rep.speedup, featcache::caching::theoretical_speedup(&r, &m.block_flops()).unwrap());
    assert!(rep.speedup > 1.0);
    assert!(rep.final_mse_sd >= 0.0);
    assert_eq!(rep.mse_curve[0], rep.final_mse_mean);
    let back: EvalReport = serde_json::from_str(&rep.to_json().unwrap()).unwrap();
    assert_eq!(back, rep);
    assert!(rep.curve_csv().starts_with("t,mse\n8,"));
}

#[test]
fn all_compute_report_is_neutral() {
    let m = tiny(2, 4);
    let schedule = make_schedule(1000).unwrap();
    let r = Router::constant(8, 4, 0.1, 20.0).unwrap();
    let rep = evaluate("full", &m, &r, &schedule, &sampler(8), &set(2)).unwrap();
    assert_eq!(rep.cur, 0.0);
    assert_eq!(rep.speedup, 1.0);
    assert_eq!(rep.final_mse_mean, 0.0);
}

#[test]
fn fora_two_caches_half() {
    let r = make_heuristic(HeuristicSchedule::ForaUniform { k: 2 }, 20, 8, 0.1).unwrap();
    assert_eq!(r.cur(), 0.5);
    let g = r.gates();
    for t in 1..=20 {
        assert_eq!(g.row_cached_count(t), if (20 - t) % 2 == 0 { 0 } else { 8 });
    }
}

#[test]
fn random_heuristic_hits_target_within_one_cell() {
    for (target, seed) in [(0.1, 1), (0.33, 2), (0.5, 3), (0.8, 4)] {
        let r = make_heuristic(HeuristicSchedule::Random { target_cur: target, seed }, 8, 8, 0.1).unwrap();
        assert!((r.cur() - target).abs() <= 1.0 / 64.0 + 1e-12, "{target}");
        assert_eq!(r.gates().row_cached_count(8), 0);
    }
    assert!(make_heuristic(HeuristicSchedule::Random { target_cur: 0.95, seed: 0 }, 8, 8, 0.1).is_err());
}

#[test]
fn match_cur_keeps_the_most_confident_cells() {
    let r = Router::random(8, 8, 0.1, featcache::caching::RouterInit { mean: -2.0, std: 2.0 }, 5).unwrap();
    let have = r.gates().cached_count();
    assert!(have > 3);
    let smaller = match_cur(&r, have - 3).unwrap();
    assert_eq!(smaller.gates().cached_count(), have - 3);
    let g = r.gates();
    let s = smaller.gates();
    for t in 1..=8 {
        for i in 0..8 {
            if s.is_cached(t, i) {
                assert!(g.is_cached(t, i));
            }
        }
    }
    assert_eq!(match_cur(&r, have).unwrap().gates().cache_grid(), g.cache_grid());
}

fn report(name: &str, mse: f64) -> EvalReport {
    EvalReport {
        name: name.into(),
        cur: 0.25,
        speedup: 1.25,
        wall_clock_per_sample: 0.0,
        final_mse_mean: mse,
        final_mse_sd: 0.0,
        mse_curve: vec![mse],
    }
}

#[test]
fn compare_ranks_by_final_error_stably() {
    let one = compare(&[report("a", 1.0)]);
    assert_eq!(one.len(), 1);
    let ranked = compare(&[report("b", 3.0), report("a", 1.0), report("c", 3.0), report("d", 0.5)]);
    let names: Vec<&str> = ranked.iter().map(|r| r.name.as_str()).collect();
    assert_eq!(names, ["d", "a", "b", "c"]);
    let csv = compare_csv(&[report("x", 2.0), report("y", 1.0)]);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "rank,method,cur,speedup,final_mse_mean,final_mse_sd");
    assert!(lines[1].starts_with("1,y,0.2500,1.2500,"));
    assert!(lines[2].starts_with("2,x,"));
}

#[test]
fn shared_teacher_runs_give_same_report() {
    let m = tiny(1, 6);
    let schedule = make_schedule(1000).unwrap();
    let sc = sampler(4);
    let es = set(2);
    let r = random_router(4, 2, 0.1, 3, 1).unwrap();
    let teacher = es.teacher_runs(&m, &schedule, &sc).unwrap();
    let mut a = evaluate_against("r", &m, &r, &schedule, &sc, &es, &teacher).unwrap();
    let mut b = evaluate("r", &m, &r, &schedule, &sc, &es).unwrap();
    a.wall_clock_per_sample = 0.0;
    b.wall_clock_per_sample = 0.0;
    assert_eq!(a, b);
}

fn heuristic() -> impl Strategy<Value = HeuristicSchedule> {
    prop_oneof![
        (1usize..6).prop_map(|k| HeuristicSchedule::ForaUniform { k }),
        Just(HeuristicSchedule::Alternating),
        (0.0f64..0.45, any::<u64>()).prop_map(|(target_cur, seed)| HeuristicSchedule::Random { target_cur, seed }),
    ]
}

proptest! {
    #[test]
    fn heuristic_gates_avoid_the_threshold(kind in heuristic(), steps in 2usize..12, blocks in 1usize..9, tau in 0.01f64..0.9) {
        let r = make_heuristic(kind, steps, blocks, tau).unwrap();
        let g = r.gates();
        prop_assert!(g.values().iter().all(|&v| (v - tau).abs() > 1e-3));
        prop_assert_eq!(g.row_cached_count(steps), 0);
        prop_assert_eq!(r.cur(), g.cached_count() as f64 / (steps * blocks) as f64);
    }

    #[test]
    fn random_router_caches_exact_count(steps in 2usize..10, blocks in 1usize..9, frac in 0.0f64..1.0, seed in any::<u64>()) {
        let count = (frac * ((steps - 1) * blocks) as f64) as usize;
        let r = random_router(steps, blocks, 0.1, count, seed).unwrap();
        prop_assert_eq!(r.gates().cached_count(), count);
        prop_assert_eq!(r.gates().row_cached_count(steps), 0);
    }
}
