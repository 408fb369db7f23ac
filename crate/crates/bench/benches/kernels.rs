use criterion::{black_box, criterion_group, criterion_main, Criterion};

use poolreg_bench::{field_64, sample_64};
use poolreg_core::deform::{exponentiate, warp_image, EXP_STEPS};
use poolreg_core::kernels::{box_sum, conv3_forward};
use poolreg_core::pyramid::{build_pyramid, ALL_MODES, ALL_WINDOWS};
use poolreg_core::Tensor;

fn conv_bench(c: &mut Criterion) {
    let mut x = Tensor::<f32>::zeros(&[8, 32, 32]);
    for (i, v) in x.data_mut().iter_mut().enumerate() {
        *v = ((i % 13) as f32) * 0.1;
    }
    let mut w = Tensor::<f32>::zeros(&[8, 8, 3, 3]);
    for (i, v) in w.data_mut().iter_mut().enumerate() {
        *v = ((i % 7) as f32 - 3.0) * 0.05;
    }
    let b = Tensor::<f32>::zeros(&[8]);
    c.bench_function("conv3_8ch_32x32", |bch| {
        bch.iter(|| conv3_forward(black_box(&x), &w, &b, 1).unwrap())
    });
}

fn pyramid_bench(c: &mut Criterion) {
    let pair = sample_64(0).input_pair();
    c.bench_function("pyramid_64x64", |b| {
        b.iter(|| build_pyramid(black_box(&pair), &ALL_MODES, &ALL_WINDOWS, true).unwrap())
    });
}

fn warp_bench(c: &mut Criterion) {
    let image = sample_64(1).moving;
    let u = field_64(3.0);
    c.bench_function("warp_64x64", |b| {
        b.iter(|| warp_image(black_box(&image), &u).unwrap())
    });
}

fn exponentiate_bench(c: &mut Criterion) {
    let v = field_64(3.0);
    c.bench_function("exponentiate_64x64", |b| {
        b.iter(|| exponentiate(black_box(&v), EXP_STEPS).unwrap())
    });
}

fn box_sum_bench(c: &mut Criterion) {
    let image = sample_64(2).fixed;
    c.bench_function("box_sum_w9_64x64", |b| {
        b.iter(|| box_sum(black_box(&image), 9).unwrap())
    });
}

criterion_group!(
    benches,
    conv_bench,
    pyramid_bench,
    warp_bench,
    exponentiate_bench,
    box_sum_bench
);
criterion_main!(benches);
