use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use octqsm::metrics::ssim3d;
use octqsm::net::{build_xqsm, NetworkConfig};
use octqsm::nn::{conv3d, conv3d_backward, ConvGeometry, Mode, Tensor5};
use octqsm::phantom::SHEPP_LOGAN_PPB;
use octqsm::train::infer_full;
use octqsm::{dipole_kernel, forward_field, shepp_logan};

fn dipole(c: &mut Criterion) {
    c.bench_function("dipole_kernel 64^3", |b| {
        b.iter(|| dipole_kernel(black_box([64; 3]), [1.0; 3]).unwrap())
    });
    let chi = shepp_logan([64; 3], SHEPP_LOGAN_PPB).unwrap().chi;
    let kernel = dipole_kernel([64; 3], [1.0; 3]).unwrap();
    c.bench_function("forward_field 64^3", |b| {
        b.iter(|| forward_field(black_box(&chi), &kernel).unwrap())
    });
    let field = forward_field(&chi, &kernel).unwrap();
    c.bench_function("ssim3d 64^3", |b| {
        b.iter(|| ssim3d(black_box(&field), &chi).unwrap())
    });
}

fn conv(c: &mut Criterion) {
    let g = ConvGeometry::same3(8, 8);
    let x = Tensor5::<f32>::full([4, 8, 32, 32, 32], 0.3);
    let w = vec![0.01f32; g.weight_len()];
    let bias = vec![0.0f32; 8];
    let y = conv3d(&x, &w, &bias, g).unwrap();
    let mut group = c.benchmark_group("conv3d 4x8x32^3 k3");
    group.sample_size(10);
    group.bench_function("forward", |b| {
        b.iter(|| conv3d(black_box(&x), &w, &bias, g).unwrap())
    });
    group.bench_function("backward", |b| {
        b.iter(|| conv3d_backward(black_box(&x), &w, g, &y).unwrap())
    });
    group.finish();
}

fn network(c: &mut Criterion) {
    let mut net = build_xqsm::<f32>(&NetworkConfig::desk(), 0).unwrap();
    let x = Tensor5::<f32>::full([1, 1, 32, 32, 32], 0.1);
    let chi = shepp_logan([64; 3], SHEPP_LOGAN_PPB).unwrap().chi;
    let field = forward_field(&chi, &dipole_kernel([64; 3], [1.0; 3]).unwrap()).unwrap();
    let mut group = c.benchmark_group("xqsm width 8");
    group.sample_size(10);
    group.bench_function("train forward+backward 32^3", |b| {
        b.iter(|| {
            let y = net.forward(black_box(&x), Mode::Train, None).unwrap();
            net.backward(&y).unwrap()
        })
    });
    group.bench_function("infer_full 64^3", |b| {
        b.iter(|| infer_full(&mut net, black_box(&field)).unwrap())
    });
    group.finish();
}

criterion_group!(benches, dipole, conv, network);
criterion_main!(benches);
