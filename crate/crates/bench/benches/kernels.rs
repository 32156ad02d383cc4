use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use pctrees::models::Fusion;
use pctrees::pointcloud::{fps_indices, knn_indices};
use pctrees::raster::project6;
use pctrees::tensor::Conv2dSpec;
use pctrees_bench::{filled, raster_spec, trees, Fixture};

fn geometry(c: &mut Criterion) {
    let cloud = trees(1, 2048, 3).remove(0);
    let mut g = c.benchmark_group("geometry");
    for n in [128, 512] {
        g.bench_with_input(BenchmarkId::new("fps", n), &n, |b, &n| {
            b.iter(|| fps_indices(black_box(&cloud.points), n).unwrap())
        });
    }
    let query = cloud.points[17];
    g.bench_function("knn_k16", |b| {
        b.iter(|| knn_indices(black_box(&cloud.points), &query, 16).unwrap())
    });
    for res in [64, 128] {
        let spec = raster_spec(res);
        g.bench_with_input(BenchmarkId::new("project6", res), &spec, |b, spec| {
            b.iter(|| project6(black_box(&cloud), spec).unwrap())
        });
    }
    g.finish();
}

fn tensor(c: &mut Criterion) {
    let mut g = c.benchmark_group("tensor");
    let input = filled(&[4, 16, 32, 32], 0.1);
    let kernels = filled(&[16, 16, 3, 3], 0.7);
    g.bench_function("conv2d_4x16x32x32_k3", |b| {
        b.iter(|| {
            input
                .conv2d(black_box(&kernels), Conv2dSpec::new(1, 1))
                .unwrap()
        })
    });
    let a = filled(&[256, 256], 0.2);
    let m = filled(&[256, 256], 0.9);
    g.bench_function("matmul_256", |b| {
        b.iter(|| a.matmul(black_box(&m)).unwrap())
    });
    g.finish();
}

fn models(c: &mut Criterion) {
    let mut g = c.benchmark_group("models");
    g.sample_size(10);
    let mut pct = Fixture::tiny_pct(8);
    g.bench_function("pct_tiny_forward_b8", |b| b.iter(|| pct.forward()));
    g.bench_function("pct_tiny_train_step_b8", |b| {
        b.iter(|| pct.train_step(&[0, 1, 2, 0, 1, 2, 0, 1]))
    });
    for (name, fusion) in [
        ("separate", Fusion::Separate),
        ("channels", Fusion::Channels),
    ] {
        let mut cnn = Fixture::cnn(8, fusion, 64);
        g.bench_function(format!("cnn_{name}_forward_b8_r64"), |b| {
            b.iter(|| cnn.forward())
        });
    }
    g.finish();
}

criterion_group!(benches, geometry, tensor, models);
criterion_main!(benches);
