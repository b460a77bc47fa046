use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use spinbed_bench::{ac, nuclear, N_P};
use spinbed_core::eig::{EigEngine, Utility};
use spinbed_core::models::LikelihoodModel;
use spinbed_core::smc::{resample_liu_west, ResamplerConfig};

fn likelihood_rows(c: &mut Criterion) {
    let mut group = c.benchmark_group("likelihood_row");
    for n_spins in [1, 2, 3] {
        let f = nuclear(n_spins, 1);
        let cache = f.model.grid_cache(&f.grid);
        let mut out = vec![0.0; f.grid.len()];
        group.throughput(Throughput::Elements(f.grid.len() as u64));
        group.bench_with_input(BenchmarkId::new("nuclear", n_spins), &n_spins, |b, _| {
            b.iter(|| f.model.prob_zero_row(&cache, black_box(f.cloud.location(0)), &mut out))
        });
    }
    let f = ac(1);
    let cache = f.model.grid_cache(&f.grid);
    let mut out = vec![0.0; f.grid.len()];
    group.throughput(Throughput::Elements(f.grid.len() as u64));
    group.bench_function("ac", |b| b.iter(|| f.model.prob_zero_row(&cache, black_box(f.cloud.location(0)), &mut out)));
    group.finish();
}

fn eig_tables(c: &mut Criterion) {
    let mut group = c.benchmark_group("eig_table");
    group.sample_size(10);
    let f = nuclear(2, N_P);
    let engine = EigEngine::new(&f.model, &f.grid);
    group.throughput(Throughput::Elements(engine.evaluations(&f.cloud) as u64));
    for utility in [Utility::CrossEntropy, Utility::MutualInformation] {
        group.bench_function(format!("nuclear2_{utility:?}"), |b| b.iter(|| engine.table(&f.cloud, utility)));
    }
    let f = ac(N_P);
    let engine = EigEngine::new(&f.model, &f.grid);
    group.throughput(Throughput::Elements(engine.evaluations(&f.cloud) as u64));
    group.bench_function("ac", |b| b.iter(|| engine.table(&f.cloud, Utility::CrossEntropy)));
    group.finish();
}

fn smc_steps(c: &mut Criterion) {
    let f = nuclear(2, N_P);
    let mut lik = vec![0.0; N_P];
    f.model.prob_zero_batch(f.cloud.locations(), 4.2, &mut lik);
    c.bench_function("bayes_update", |b| {
        b.iter_batched(
            || f.cloud.clone(),
            |mut cloud| cloud.bayes_update(&lik).map(|_| cloud),
            criterion::BatchSize::LargeInput,
        )
    });
    let mut updated = f.cloud.clone();
    updated.bayes_update(&lik).expect("update");
    let cfg = ResamplerConfig::default();
    c.bench_function("liu_west_resample", |b| b.iter(|| resample_liu_west(&updated, &f.model, &cfg, 3)));
}

criterion_group!(benches, likelihood_rows, eig_tables, smc_steps);
criterion_main!(benches);
