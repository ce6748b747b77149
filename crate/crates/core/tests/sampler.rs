mod common;

use common::{classes, hand_generate, max_abs_diff, tiny};
use featcache::caching::{apply_mask, GateMatrix, Router};
use featcache::dit::Condition;
use featcache::sampler::{
    ddim_step, euler_step, gaussian, make_schedule, sample, NoiseSchedule, SamplerConfig, SamplerKind, Spacing,
};
use featcache::Tensor;
use proptest::prelude::*;

fn sampler(steps: usize) -> SamplerConfig {
    SamplerConfig {
        steps,
        ..SamplerConfig::default()
    }
}

#[test]
fn alphas_bar_is_the_running_product() {
    let s = make_schedule(1000).unwrap();
    assert_eq!(s.betas()[0], 1e-4);
    assert!((s.betas()[999] - 0.02).abs() < 1e-15);
    let mut prod = 1.0;
    for k in 0..1000 {
        let beta = 1e-4 + (0.02 - 1e-4) * k as f64 / 999.0;
        prod *= 1.0 - beta;
        assert!((s.alphas_bar()[k] - prod).abs() <= 1e-15 * prod.max(1e-300) + 1e-18);
        if k > 0 {
            assert!(s.alphas_bar()[k] < s.alphas_bar()[k - 1]);
        }
    }
    assert_eq!(s.alpha_bar(0).unwrap(), 1.0);
    assert!(s.alphas_bar()[0] > 0.9998);
}

#[test]
fn ddim_zero_noise_rescales() {
    let s = make_schedule(1000).unwrap();
    let x = gaussian(&[1, 1, 4, 4], 3);
    let y = ddim_step(&s, &x, 700, 300, &Tensor::zeros(&[1, 1, 4, 4])).unwrap();
    let k = (s.alpha_bar(300).unwrap() / s.alpha_bar(700).unwrap()).sqrt();
    for (a, b) in y.data().iter().zip(x.data()) {
        assert!((a - k * b).abs() < 1e-12);
    }
}

#[test]
fn two_ddim_steps_with_fixed_noise_equal_one() {
    let s = make_schedule(1000).unwrap();
    let x = gaussian(&[2, 1, 4, 4], 5);
    let eps = gaussian(&[2, 1, 4, 4], 6);
    for (hi, mid, lo) in [(900, 500, 100), (250, 125, 0), (1000, 999, 998)] {
        let two = ddim_step(&s, &ddim_step(&s, &x, hi, mid, &eps).unwrap(), mid, lo, &eps).unwrap();
        let one = ddim_step(&s, &x, hi, lo, &eps).unwrap();
        assert!(max_abs_diff(&two, &one) < 1e-10, "{hi}->{mid}->{lo}");
    }
}

#[test]
fn ddim_rejects_backward_steps() {
    let s = make_schedule(1000).unwrap();
    let x = Tensor::zeros(&[1, 1, 2, 2]);
    assert!(ddim_step(&s, &x, 300, 300, &x).is_err());
    assert!(ddim_step(&s, &x, 1001, 3, &x).is_err());
}

#[test]
fn euler_half_steps_compose() {
    let x = gaussian(&[1, 1, 4, 4], 7);
    let v = gaussian(&[1, 1, 4, 4], 8);
    let full = euler_step(&x, 1.0, 0.0, &v).unwrap();
    let half = euler_step(&euler_step(&x, 1.0, 0.5, &v).unwrap(), 0.5, 0.0, &v).unwrap();
    assert!(max_abs_diff(&full, &half) < 1e-14);
    // linear path x_σ = x_0 + σ·(x_1 − x_0) with velocity x_1 − x_0
    let x0 = gaussian(&[1, 1, 4, 4], 9);
    let vel = Tensor::new(x.shape().to_vec(), x.data().iter().zip(x0.data()).map(|(a, b)| a - b).collect()).unwrap();
    assert!(max_abs_diff(&euler_step(&x, 1.0, 0.0, &vel).unwrap(), &x0) < 1e-14);
    assert_eq!(euler_step(&x, 0.7, 0.2, &Tensor::zeros(&[1, 1, 4, 4])).unwrap(), x);
}

#[test]
fn spacing_endpoints() {
    for spacing in [Spacing::Uniform, Spacing::Leading] {
        assert_eq!(spacing.train_step(0, 8, 1000), 0);
        let steps: Vec<usize> = (0..=8).map(|t| spacing.train_step(t, 8, 1000)).collect();
        assert!(steps.windows(2).all(|w| w[0] < w[1]));
    }
    assert_eq!(Spacing::Uniform.train_step(8, 8, 1000), 1000);
    assert_eq!(Spacing::Leading.train_step(8, 8, 1000), 1000);
    assert_eq!(Spacing::Uniform.train_step(1, 3, 1000), 333);
    assert_eq!(Spacing::Leading.train_step(3, 3, 1000), 999);
}

#[test]
fn all_above_threshold_router_matches_plain_sampling() {
    let model = tiny(2, 1);
    let s = make_schedule(1000).unwrap();
    let cfg = sampler(6);
    let gates = Router::random(6, 4, 0.1, Default::default(), 3).unwrap().gates();
    for seed in 0..3 {
        let x = gaussian(&[2, 1, 8, 8], seed);
        let plain = sample(&model, None, &s, &cfg, &x, &classes(2)).unwrap();
        let cached = sample(&model, Some(&gates), &s, &cfg, &x, &classes(2)).unwrap();
        assert!(max_abs_diff(plain.x0(), cached.x0()) <= 1e-9);
        assert_eq!(cached.total_computed(), 6 * 4);
    }
}

#[test]
fn cached_generation_matches_hand_stepped_reference() {
    // T=4, N=2 with a hand-written schedule
    let model = tiny(1, 2);
    let s = make_schedule(1000).unwrap();
    let cfg = sampler(4);
    let rows = vec![vec![0.05, 0.9], vec![0.9, 0.05], vec![0.05, 0.05], vec![0.3, 0.3]];
    let gates = GateMatrix::from_values(4, 2, 0.1, rows.concat()).unwrap();
    let x = gaussian(&[2, 1, 8, 8], 11);
    let traj = sample(&model, Some(&gates), &s, &cfg, &x, &classes(2)).unwrap();
    let hand = hand_generate(&model, &s, &cfg, &rows, 0.1, &x, &classes(2));
    for t in 0..=4 {
        assert_eq!(traj.x(t), &hand[4 - t], "x_{t}");
    }
    assert_eq!(traj.record(4).computed, 2);
    assert_eq!(traj.record(3).reused, 2);
    assert_eq!((traj.record(2).computed, traj.record(2).reused), (1, 1));
    let plain = sample(&model, None, &s, &cfg, &x, &classes(2)).unwrap();
    assert!(max_abs_diff(plain.x0(), traj.x0()) > 0.0);
}

#[test]
fn unit_guidance_is_conditional_only() {
    let model = tiny(2, 4);
    let s = make_schedule(1000).unwrap();
    let cfg = sampler(4);
    let x = gaussian(&[2, 1, 8, 8], 12);
    let traj = sample(&model, None, &s, &cfg, &x, &classes(2)).unwrap();
    let mut y = x.clone();
    for t in (1..=4).rev() {
        let (hi, lo) = (cfg.train_step(&s, t), cfg.train_step(&s, t - 1));
        let eps = model.forward_plain(&y, &Condition::new(hi, classes(2))).unwrap();
        y = ddim_step(&s, &y, hi, lo, &eps).unwrap();
    }
    assert_eq!(traj.x0(), &y);
}

#[test]
fn guidance_combines_branches() {
    let model = tiny(2, 4);
    let s = make_schedule(1000).unwrap();
    let cfg = SamplerConfig {
        cfg_scale: 3.0,
        ..sampler(2)
    };
    let x = gaussian(&[2, 1, 8, 8], 13);
    let traj = sample(&model, None, &s, &cfg, &x, &classes(2)).unwrap();
    let hi = cfg.train_step(&s, 2);
    let c = model.forward_plain(&x, &Condition::new(hi, classes(2))).unwrap();
    let u = model.forward_plain(&x, &Condition::new(hi, vec![None, None])).unwrap();
    let expected: Vec<f64> = c.data().iter().zip(u.data()).map(|(c, u)| u + 3.0 * (c - u)).collect();
    for (a, b) in traj.record(2).eps.data().iter().zip(&expected) {
        assert!((a - b).abs() < 1e-12);
    }
    // both branches cache independently: 2 branches × N blocks at pre-fill
    let gates = GateMatrix::from_values(2, 4, 0.1, vec![0.05; 8]).unwrap();
    let cached = sample(&model, Some(&gates), &s, &cfg, &x, &classes(2)).unwrap();
    assert_eq!(cached.record(2).computed, 8);
    assert_eq!(cached.record(1).reused, 8);
}

#[test]
fn masked_router_computes_every_block_at_its_step() {
    let model = tiny(2, 6);
    let s = make_schedule(1000).unwrap();
    let cfg = sampler(6);
    let x = gaussian(&[2, 1, 8, 8], 14);
    for seed in 0..5 {
        let r = Router::random(6, 4, 0.1, featcache::caching::RouterInit { mean: -2.0, std: 1.5 }, seed).unwrap();
        for t in 1..6 {
            let masked = apply_mask(&r, t).unwrap();
            let traj = sample(&model, Some(&masked), &s, &cfg, &x, &classes(2)).unwrap();
            assert_eq!(traj.record(t).computed, 4);
            assert_eq!(traj.record(t).reused, 0);
        }
    }
}

#[test]
fn euler_sampler_runs_and_is_deterministic() {
    let model = tiny(1, 7);
    let s = make_schedule(1000).unwrap();
    let cfg = SamplerConfig {
        kind: SamplerKind::Euler,
        ..sampler(4)
    };
    let x = gaussian(&[1, 1, 8, 8], 15);
    let a = sample(&model, None, &s, &cfg, &x, &classes(1)).unwrap();
    let b = sample(&model, None, &s, &cfg, &x, &classes(1)).unwrap();
    assert_eq!(a.x0(), b.x0());
    let v = &a.record(4).eps;
    assert_eq!(a.x(3), &euler_step(&x, 1.0, 0.75, v).unwrap());
}

#[test]
fn router_shape_mismatch_is_rejected() {
    let model = tiny(1, 8);
    let s: NoiseSchedule = make_schedule(1000).unwrap();
    let x = gaussian(&[1, 1, 8, 8], 16);
    let wrong_t = GateMatrix::all_compute(5, 2, 0.1);
    let wrong_n = GateMatrix::all_compute(4, 3, 0.1);
    assert!(sample(&model, Some(&wrong_t), &s, &sampler(4), &x, &classes(1)).is_err());
    assert!(sample(&model, Some(&wrong_n), &s, &sampler(4), &x, &classes(1)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn no_unfilled_slot_is_ever_read(
        values in proptest::collection::vec(0.01f64..1.0, 5 * 2),
        seed in 0u64..500,
    ) {
        let model = tiny(1, 9);
        let s = make_schedule(1000).unwrap();
        let gates = GateMatrix::from_values(5, 2, 0.3, values).unwrap();
        let x = gaussian(&[1, 1, 8, 8], seed);
        let a = sample(&model, Some(&gates), &s, &sampler(5), &x, &classes(1)).unwrap();
        let b = sample(&model, Some(&gates), &s, &sampler(5), &x, &classes(1)).unwrap();
        prop_assert_eq!(a.x0(), b.x0());
        let cached = (1..5).map(|t| gates.row_cached_count(t)).sum::<usize>();
        let reused: usize = (1..=5).map(|t| a.record(t).reused).sum();
        prop_assert_eq!(reused, cached);
    }
}
