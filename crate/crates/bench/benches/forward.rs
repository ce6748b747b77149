use criterion::{black_box, criterion_group, criterion_main, Criterion};
use featcache::caching::Cache;
use featcache::dit::{CacheMode, Condition, DiTConfig, DiTModel, Gates};
use featcache::sampler::{gaussian, make_schedule, BranchCaches, SamplerConfig};
use featcache::trainer::router_row_step;
use featcache::{Backend, Eager, Graph, Tensor};

const BATCH: usize = 8;

fn setup() -> (DiTModel, Tensor, Condition) {
    let model = DiTModel::new(DiTConfig::default()).unwrap();
    let x = gaussian(&model.config().image_shape(BATCH), 1);
    let cond = Condition::new(500, (0..BATCH).map(|j| Some(j % 4)).collect());
    (model, x, cond)
}

fn filled_cache(model: &DiTModel, x: &Tensor, cond: &Condition) -> Cache {
    let mut cache = Cache::new(model.n_blocks());
    let ones = vec![1.0; model.n_blocks()];
    model.forward_hard(x, cond, &ones, 0.1, &mut cache).unwrap();
    cache
}

fn forward(c: &mut Criterion) {
    let (model, x, cond) = setup();
    let n = model.n_blocks();
    c.bench_function("forward_plain", |b| b.iter(|| model.forward_plain(black_box(&x), &cond).unwrap()));

    // half of the blocks reuse their cached output
    let gates: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 1.0 } else { 0.05 }).collect();
    let mut cache = filled_cache(&model, &x, &cond);
    c.bench_function("forward_hard_half_cached", |b| {
        b.iter(|| model.forward_hard(black_box(&x), &cond, &gates, 0.1, &mut cache).unwrap())
    });

    let soft = vec![0.6; n];
    let mut cache = filled_cache(&model, &x, &cond);
    c.bench_function("forward_soft_eager", |b| {
        b.iter(|| {
            model
                .forward_cached(&mut Eager, black_box(&x), &cond, Gates::Numeric(&soft), 0.1, &mut cache, CacheMode::Soft)
                .unwrap()
        })
    });

    let mut trainable = model.clone();
    trainable.set_trainable(true);
    c.bench_function("forward_soft_backward", |b| {
        b.iter(|| {
            let mut g = Graph::new();
            let out = trainable
                .forward_cached(&mut g, black_box(&x), &cond, Gates::Numeric(&soft), 0.1, &mut cache, CacheMode::Soft)
                .unwrap();
            let loss = g.sum(&out).unwrap();
            g.backward(loss).unwrap();
        })
    });
}

fn router_update(c: &mut Criterion) {
    let (model, x, _) = setup();
    let schedule = make_schedule(1000).unwrap();
    let sampler = SamplerConfig::default();
    let classes: Vec<Option<usize>> = (0..BATCH).map(|j| Some(j % 4)).collect();
    let logits = vec![0.5; model.n_blocks()];
    let mut caches = BranchCaches::new(model.n_blocks(), &sampler);
    let ones = vec![1.0; model.n_blocks()];
    featcache::sampler::predict(&model, &schedule, &sampler, &x, sampler.steps, &classes, Some((&ones, 0.1)), &mut caches)
        .unwrap();
    c.bench_function("router_row_step", |b| {
        b.iter(|| {
            router_row_step(&model, &schedule, &sampler, black_box(&x), 4, &classes, &logits, 0.1, &mut caches, 1.0, 0.05)
                .unwrap()
        })
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = forward, router_update
}
criterion_main!(benches);
