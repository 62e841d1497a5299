use block_fusion::fusion::{fuse, fuse_backward, fuse_forward};
use block_fusion_bench::fixtures;
use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

fn forward(c: &mut Criterion) {
    let mut group = c.benchmark_group("forward");
    for f in fixtures(64, 16) {
        group.bench_function(f.name, |b| {
            b.iter(|| fuse(&f.spec, &f.params, black_box(&f.x1), black_box(&f.x2)).unwrap())
        });
    }
    group.finish();
}

fn backward(c: &mut Criterion) {
    let mut group = c.benchmark_group("backward");
    for f in fixtures(64, 16) {
        let (_, tape) = fuse_forward(&f.spec, &f.params, &f.x1, &f.x2).unwrap();
        let dy = vec![1.0; f.spec.output_dim];
        group.bench_function(f.name, |b| {
            b.iter(|| fuse_backward(&f.spec, &f.params, &tape, black_box(&dy)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, forward, backward);
criterion_main!(benches);
