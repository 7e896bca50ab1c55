use criterion::{black_box, criterion_group, criterion_main, Criterion};

use seqtrials::estimators::{expand_sequential_trials, Family};
use seqtrials::simgen::{default_horizons, generate_cohort, generate_truth, Method, ScenarioParams};
use seqtrials_bench::cohort;

fn pipelines(c: &mut Criterion) {
    let params = ScenarioParams::scenario(1).unwrap();
    let horizons = default_horizons(&params);
    let data = cohort(1000, 2);

    let mut g = c.benchmark_group("pipeline/n=1000");
    for m in Method::ALL {
        let (msm, w) = m.specs(&params, Family::Aalen, horizons.clone());
        g.bench_function(m.label(), |b| b.iter(|| m.run(black_box(&data), &msm, &w).unwrap()));
    }
    g.finish();

    c.bench_function("expand_sequential_trials/n=1000", |b| b.iter(|| expand_sequential_trials(black_box(&data))));
    c.bench_function("generate_cohort/n=1000", |b| b.iter(|| generate_cohort(&params, 1000, black_box(3)).unwrap()));
    let mut g = c.benchmark_group("truth");
    g.sample_size(10);
    g.bench_function("n=100000", |b| b.iter(|| generate_truth(&params, 100_000, &horizons, black_box(4)).unwrap()));
    g.finish();
}

criterion_group!(benches, pipelines);
criterion_main!(benches);
