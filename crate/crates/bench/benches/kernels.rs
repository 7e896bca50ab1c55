use criterion::{black_box, criterion_group, criterion_main, Criterion};

use seqtrials::glm::fit_weighted_logistic;
use seqtrials::survfit::{fit_weighted_aalen, fit_weighted_cox, kaplan_meier};
use seqtrials_bench::{cohort, interval_rows, treatment_design};

fn kernels(c: &mut Criterion) {
    let data = cohort(1000, 1);
    let (x, y, w) = treatment_design(&data);
    let rows = interval_rows(&data);
    let times: Vec<(f64, bool)> = data.subjects().iter().map(|s| (s.t_end, s.status)).collect();

    c.bench_function("logistic/n=1000", |b| b.iter(|| fit_weighted_logistic(black_box(&x), &y, &w).unwrap()));
    c.bench_function("cox/n=1000", |b| b.iter(|| fit_weighted_cox(black_box(&rows)).unwrap()));
    c.bench_function("aalen/n=1000", |b| b.iter(|| fit_weighted_aalen(black_box(&rows)).unwrap()));
    c.bench_function("kaplan_meier/n=1000", |b| b.iter(|| kaplan_meier(black_box(&times)).unwrap()));
}

criterion_group!(benches, kernels);
criterion_main!(benches);
