use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use essgan::autodiff::{conv2d, Padding};
use essgan::data::{make_phantom, PhantomKind};
use essgan::kspace::{fft2, ifft2, make_mask, undersample, zero_fill};
use essgan::losses::{ms_ssim_value, MsSsimParams};
use essgan::training::{stack, train_step, Batch};
use essgan::{Image, MaskKind, MaskSpec, Model, SgConfig, Tensor, TrainConfig, TrainState};

fn phantom(size: usize) -> Image<f64> {
    make_phantom(PhantomKind::Ellipses, size, 1).unwrap().image.to_f64()
}

fn pseudo_random(shape: &[usize]) -> Tensor<f32> {
    Tensor::from_fn(shape, |i| ((i as f32 * 0.618_034).fract() - 0.5) * 0.2)
}

fn mask_spec(size: usize) -> MaskSpec {
    MaskSpec {
        kind: MaskKind::Radial,
        target_rate: 0.3,
        seed: 7,
        height: size,
        width: size,
    }
}

fn kspace(c: &mut Criterion) {
    let x = phantom(256);
    let mask = make_mask(&mask_spec(256)).unwrap();
    c.bench_function("fft2 roundtrip 256", |b| {
        b.iter(|| ifft2(&fft2(black_box(&x)).unwrap()).unwrap())
    });
    c.bench_function("undersample + zero fill 256", |b| {
        b.iter(|| zero_fill(&undersample(black_box(&x), &mask, None).unwrap()).unwrap())
    });
}

fn convolution(c: &mut Criterion) {
    let input = pseudo_random(&[8, 16, 64, 64]);
    let weight = pseudo_random(&[32, 16, 3, 3]);
    c.bench_function("conv2d 8x16x64x64 -> 32, stride 1", |b| {
        b.iter(|| conv2d(black_box(&input), &weight, None, 1, Padding::Same).unwrap())
    });
    c.bench_function("conv2d 8x16x64x64 -> 32, stride 2", |b| {
        b.iter(|| conv2d(black_box(&input), &weight, None, 2, Padding::Same).unwrap())
    });
}

fn generator(c: &mut Criterion) {
    let cfg = SgConfig::new(3, 16, 64, 64).unwrap();
    let model = Model::<f32>::new(cfg.clone(), 0).unwrap();
    let x = pseudo_random(&[4, 1, 64, 64]);
    c.bench_function("generator forward 4x64x64, M=3 f=16", |b| {
        b.iter(|| model.reconstruct(black_box(&x)).unwrap())
    });

    let mut tc = TrainConfig::new(cfg, mask_spec(64));
    tc.batch_size = 4;
    let imgs: Vec<Image<f32>> = (0..4)
        .map(|s| make_phantom(PhantomKind::Blobs, 64, s).unwrap().image)
        .collect();
    let refs: Vec<&Image<f32>> = imgs.iter().collect();
    let batch = Batch {
        x: stack(&refs).unwrap(),
        x_zf: stack(&refs).unwrap(),
    };
    let mut group = c.benchmark_group("training");
    group.sample_size(10);
    group.bench_function("train step 4x64x64, M=3 f=16", |b| {
        let mut m = model.clone();
        let mut state = TrainState::new(m.params(), &tc);
        b.iter(|| train_step(&mut m, &mut state, &tc, &batch, 1e-4).unwrap())
    });
    group.finish();
}

fn structural(c: &mut Criterion) {
    let x = phantom(256);
    let y = x.map(|v| 0.9 * v + 0.05);
    let p = MsSsimParams::for_extent(256).unwrap();
    c.bench_function("ms-ssim 256", |b| {
        b.iter(|| ms_ssim_value(black_box(&x), &y, &p).unwrap())
    });
}

criterion_group!(benches, kspace, convolution, generator, structural);
criterion_main!(benches);
