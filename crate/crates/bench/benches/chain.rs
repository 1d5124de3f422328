use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use relconv::chainlab::{simulate_chain, ChainFamily, ChainSpec};
use relconv::numerics::{matmul, top2_singular_values, Matrix};

fn chains(c: &mut Criterion) {
    let mut g = c.benchmark_group("chain_simulate");
    g.sample_size(20);
    for dim in [64, 128, 256] {
        let spec = ChainSpec::square(ChainFamily::PositiveAbs, dim, 16, 3);
        g.bench_with_input(BenchmarkId::new("positive", dim), &spec, |b, s| b.iter(|| simulate_chain(s).unwrap()));
    }
    g.finish();
}

fn dense_kernels(c: &mut Criterion) {
    let a = Matrix::from_fn(256, 256, |i, j| ((i * 31 + j * 17) % 13) as f64 - 6.0);
    c.bench_function("matmul_256", |b| b.iter(|| matmul(&a, &a).unwrap()));
    c.bench_function("top2_singular_256", |b| b.iter(|| top2_singular_values(&a).unwrap()));
}

criterion_group!(benches, chains, dense_kernels);
criterion_main!(benches);
