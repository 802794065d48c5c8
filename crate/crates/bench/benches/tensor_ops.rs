use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use mwae_core::tensor::{BnState, Mode, Tensor};
use mwae_core::Rng;

fn random_tensor(shape: &[usize], rng: &mut Rng) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new((0..n).map(|_| rng.uniform() as f32).collect(), shape).unwrap()
}

fn bench_conv2d(c: &mut Criterion) {
    let mut rng = Rng::seed_from(1);
    let x = random_tensor(&[4, 16, 64, 64], &mut rng);
    let w = random_tensor(&[32, 16, 3, 3], &mut rng);
    let b = random_tensor(&[32], &mut rng);
    c.bench_function("conv2d 4x16x64x64 -> 32", |bench| {
        bench.iter(|| black_box(x.conv2d(&w, &b).unwrap()))
    });

    let xt = x.tracked_leaf();
    let wt = w.tracked_leaf();
    let bt = b.tracked_leaf();
    c.bench_function("conv2d forward+backward", |bench| {
        bench.iter(|| {
            let y = xt.conv2d(&wt, &bt).unwrap();
            let loss = y.sum();
            loss.backward().unwrap();
            black_box(wt.grad().is_some())
        })
    });
}

fn bench_norm_pool(c: &mut Criterion) {
    let mut rng = Rng::seed_from(2);
    let x = random_tensor(&[8, 32, 64, 64], &mut rng);
    let gamma = Tensor::full(&[32], 1.0);
    let beta = Tensor::zeros(&[32]);
    c.bench_function("batchnorm2d train 8x32x64x64", |bench| {
        bench.iter(|| {
            let mut st = BnState::new(32);
            black_box(x.batchnorm2d(&gamma, &beta, &mut st, Mode::Train).unwrap())
        })
    });
    c.bench_function("maxpool2d 8x32x64x64", |bench| {
        bench.iter(|| black_box(x.maxpool2d().unwrap()))
    });
}

criterion_group!(benches, bench_conv2d, bench_norm_pool);
criterion_main!(benches);
