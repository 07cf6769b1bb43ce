use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vidcompress_core::toyunet::{Multiscaling, ToyUNet, ToyUNetSpec};

fn bench_forward(c: &mut Criterion) {
    let mut group = c.benchmark_group("toyunet_forward");
    group.sample_size(10);
    for (name, ms) in [("none", Multiscaling::None), ("both", Multiscaling::Both)] {
        let net = ToyUNet::build(&ToyUNetSpec {
            multiscaling: ms,
            ..ToyUNetSpec::default()
        })
        .unwrap();
        let (x, cond) = net.random_inputs(&mut ChaCha8Rng::seed_from_u64(0));
        group.bench_function(name, |b| b.iter(|| net.forward(&x, &cond).unwrap()));
    }
    group.finish();
}

fn bench_flops(c: &mut Criterion) {
    let net = ToyUNet::build(&ToyUNetSpec::default()).unwrap();
    c.bench_function("toyunet_count_flops", |b| b.iter(|| net.count_flops().unwrap()));
}

criterion_group!(benches, bench_forward, bench_flops);
criterion_main!(benches);
