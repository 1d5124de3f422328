use criterion::{criterion_group, criterion_main, Criterion};
use relconv::attribution::RuleConfig;
use relconv::metrics::{csc_run, random_logit_batch};
use relconv::Preset;
use relconv_bench::{cifar, inputs};

fn csc(c: &mut Criterion) {
    let net = cifar();
    let xs = inputs(&net, 2);
    let mut g = c.benchmark_group("csc_cifar10");
    g.sample_size(10);
    g.bench_function("zplus_2x5", |b| b.iter(|| csc_run(&net, &xs, &RuleConfig::ZPlus, "fc6", 5, 1).unwrap()));
    g.finish();
}

fn random_logit(c: &mut Criterion) {
    let net = Preset::Mlp(vec![64, 128, 128, 10]).build(1).unwrap();
    let xs = inputs(&net, 16);
    c.bench_function("random_logit_mlp_16", |b| b.iter(|| random_logit_batch(&net, &xs, &RuleConfig::ZPlus, 1).unwrap()));
}

criterion_group!(benches, csc, random_logit);
criterion_main!(benches);
