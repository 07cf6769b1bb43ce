use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vidcompress_core::pruning::{sample_fixed_size_with, solve_inclusion, solver_jacobian, Sampler};

fn importances(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(0.05..1.0)).collect()
}

fn bench_solver(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let q = importances(&mut rng, 10);
    c.bench_function("solve_inclusion_10", |b| b.iter(|| solve_inclusion(&q, 4).unwrap()));
    c.bench_function("solver_jacobian_10", |b| b.iter(|| solver_jacobian(&q, 4).unwrap()));
}

fn bench_sampling(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let q = importances(&mut rng, 10);
    let p = solve_inclusion(&q, 4).unwrap().p;
    for (name, sampler) in [
        ("brewer_10", Sampler::Brewer),
        ("systematic_pps_10", Sampler::SystematicPps),
    ] {
        let mut draw_rng = ChaCha8Rng::seed_from_u64(2);
        c.bench_function(name, |b| {
            b.iter(|| sample_fixed_size_with(sampler, &p, 4, &mut draw_rng).unwrap())
        });
    }
}

criterion_group!(benches, bench_solver, bench_sampling);
criterion_main!(benches);
