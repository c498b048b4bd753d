use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use relu_forge::constructors::{lip1_product_net, max_net, product_net};
use relu_forge::pipeline::{build, builtin_family, BuildOptions};

fn constructors(c: &mut Criterion) {
    let mut group = c.benchmark_group("construct");
    for d in [4usize, 16, 64] {
        group.bench_with_input(BenchmarkId::new("max_net", d), &d, |b, &d| {
            b.iter(|| max_net(black_box(d)))
        });
    }
    for d in [2usize, 5, 10] {
        group.bench_with_input(BenchmarkId::new("product_net", d), &d, |b, &d| {
            b.iter(|| product_net(black_box(d), 1.0, 1e-3).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("lip1_product_net", d), &d, |b, &d| {
            b.iter(|| lip1_product_net(black_box(d), 1e-2).unwrap())
        });
    }
    group.finish();
}

fn pipeline(c: &mut Criterion) {
    let mut group = c.benchmark_group("pipeline");
    group.sample_size(10);
    let opts = BuildOptions {
        certify: false,
        ..Default::default()
    };
    for (family, d) in [("prodmax_tree", 6usize), ("powermax", 4), ("tower", 4)] {
        let spec = builtin_family(family, d).unwrap();
        group.bench_function(BenchmarkId::new(family, d), |b| {
            b.iter(|| build(black_box(&spec), 0.1, &opts).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, constructors, pipeline);
criterion_main!(benches);
