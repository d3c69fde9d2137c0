//! Wall-clock benchmarks for the transforms and the two block families.

use criterion::{black_box, criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spectral_core::blocks::{
    conv_block_forward, wave_block_forward, ConvBlockParams, WaveBlockParams, WaveConv,
};
use spectral_core::tensor::ops::conv2d;
use spectral_core::tensor::{BatchNormState, ConvParams, Mode};
use spectral_core::wavelet::{dtcwt_forward, dtcwt_inverse, haar_forward, FilterBank, WaveletKind};
use spectral_core::Tensor;

fn rand_tensor(shape: &[usize], seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0f32..1.0))
}

fn bench_transforms(c: &mut Criterion) {
    let fb = FilterBank::default();
    let x = rand_tensor(&[1, 8, 64, 64], 1);
    c.bench_function("dtcwt_forward_64x64x8_l2", |b| {
        b.iter(|| dtcwt_forward(black_box(&x), 2, &fb).unwrap())
    });
    let s = dtcwt_forward(&x, 2, &fb).unwrap();
    c.bench_function("dtcwt_inverse_64x64x8_l2", |b| {
        b.iter(|| dtcwt_inverse(black_box(&s), &fb).unwrap())
    });
    c.bench_function("haar_forward_64x64x8", |b| {
        b.iter(|| haar_forward(black_box(&x)).unwrap())
    });
}

fn bench_conv(c: &mut Criterion) {
    let x = rand_tensor(&[1, 16, 64, 64], 2);
    let w = rand_tensor(&[32, 16, 3, 3], 3);
    let p = ConvParams::new(w, Tensor::zeros(&[32])).unwrap();
    c.bench_function("conv2d_3x3_16to32_64x64", |b| {
        b.iter(|| conv2d(black_box(&x), &p).unwrap())
    });
}

fn bench_blocks(c: &mut Criterion) {
    let fb = FilterBank::default();
    let x = rand_tensor(&[1, 16, 64, 64], 4);

    let cin = WaveBlockParams::<f32>::conv_in_channels(16, WaveletKind::Dtcwt, WaveConv::GroupedShared);
    let mut wave = WaveBlockParams {
        conv: ConvParams::new(rand_tensor(&[32, cin, 3, 3], 5), Tensor::zeros(&[32])).unwrap(),
        bn: BatchNormState::new(32, 0.1),
        wavelet: WaveletKind::Dtcwt,
        conv_mode: WaveConv::GroupedShared,
    };
    c.bench_function("wave_block_forward_16c_64x64", |b| {
        b.iter(|| wave_block_forward(black_box(&x), &mut wave, Mode::Eval, &fb).unwrap())
    });

    let mut conv = ConvBlockParams {
        conv: ConvParams::new(rand_tensor(&[32, 16, 3, 3], 6), Tensor::zeros(&[32])).unwrap(),
        bn: BatchNormState::new(32, 0.1),
    };
    c.bench_function("conv_block_forward_16c_64x64", |b| {
        b.iter(|| conv_block_forward(black_box(&x), &mut conv, Mode::Eval).unwrap())
    });
}

criterion_group!(benches, bench_transforms, bench_conv, bench_blocks);
criterion_main!(benches);
