use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use sevar_bench::{activations, image_batch};
use sevar_core::attention::{attention_forward, AttentionParams, AttentionSpec};
use sevar_core::harness::train::train_step;
use sevar_core::layers::kernels::{conv2d, conv2d_backward, ConvGeometry};
use sevar_core::optim::Adadelta;
use sevar_core::{Arch, Model, ModelConfig, Rng, Tensor, VariantKind};

fn conv(c: &mut Criterion) {
    let mut group = c.benchmark_group("conv3x3");
    let geom = ConvGeometry { stride: 1, padding: 1 };
    for (cin, cout, hw) in [(3, 32, 32), (32, 64, 16), (64, 64, 8)] {
        let x = activations(16, cin, hw, 1);
        let w = Tensor::<f32>::rand_uniform(&mut Rng::new(2), &[cout, cin, 3, 3], -0.1, 0.1).unwrap();
        let y = conv2d(&x, &w, None, geom).unwrap();
        let id = format!("{cin}x{hw}->{cout}");
        group.bench_function(BenchmarkId::new("forward", &id), |b| {
            b.iter(|| conv2d(black_box(&x), black_box(&w), None, geom).unwrap())
        });
        group.bench_function(BenchmarkId::new("backward", &id), |b| {
            b.iter(|| conv2d_backward(black_box(&x), black_box(&w), black_box(&y), geom).unwrap())
        });
    }
    group.finish();
}

fn attention(c: &mut Criterion) {
    let mut group = c.benchmark_group("attention_64_16");
    let u = activations(64, 64, 16, 3);
    for v in VariantKind::ALL {
        let spec = AttentionSpec::new(v, 64, 16).unwrap();
        let params = AttentionParams::random(&spec, &mut Rng::new(4), 0.1).unwrap();
        group.bench_function(v.name(), |b| {
            b.iter(|| attention_forward(black_box(&u), &spec, &params).unwrap())
        });
    }
    group.finish();
}

fn cnn3_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("cnn3_train_step");
    group.sample_size(10);
    let x = image_batch(64, 32, 5);
    let labels: Vec<usize> = (0..64).map(|i| i % 10).collect();
    for v in [VariantKind::None, VariantKind::Se, VariantKind::Bump] {
        let mut model = Model::<f32>::build(ModelConfig::new(Arch::Cnn3, v), 0).unwrap();
        let mut opt = Adadelta::new(model.store.params(), 0.9, 1e-6);
        group.bench_function(v.name(), |b| {
            b.iter(|| train_step(&mut model, &mut opt, x.clone(), &labels, 1.0).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, conv, attention, cnn3_step);
criterion_main!(benches);
