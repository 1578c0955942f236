//! Throughput of the hot paths: generator inference at several sizes, pyramid
//! pooling, the SSIM loss and one full adversarial training step.

use criterion::{black_box, BenchmarkId, Criterion, Throughput};
use dehaze_core::discriminator::spp_pool;
use dehaze_core::losses::ssim_loss;
use dehaze_core::{
    DType, Device, DiscriminatorSpec, Domain, Generator, GeneratorSpec, Image, ModelConfig, NoiseSource, ParamStore,
    Tensor, TrainConfig, Trainer,
};

/// Smooth deterministic picture in the network domain.
pub fn scene(h: usize, w: usize) -> Image {
    Image::from_fn(h, w, Domain::UnitSigned, |c, y, x| {
        (0.05 * y as f64 + 0.03 * x as f64 + c as f64).sin() * 0.8
    })
    .expect("valid image")
}

fn tensor(h: usize, w: usize) -> Tensor {
    scene(h, w).to_tensor(DType::F32, &Device::Cpu).expect("tensor")
}

pub fn generator_forward(c: &mut Criterion) {
    let spec = GeneratorSpec::ur_net_7().scaled_widths(4);
    let mut store = ParamStore::new(DType::F32, Device::Cpu, 0);
    let gen = Generator::new(&spec, &mut store, "generator").expect("generator");
    let noise = NoiseSource::new(0);
    let mut group = c.benchmark_group("generator_forward");
    group.sample_size(10);
    for &(h, w) in &[(64, 64), (128, 128), (181, 257)] {
        let x = tensor(h, w);
        group.throughput(Throughput::Elements((h * w) as u64));
        group.bench_with_input(BenchmarkId::from_parameter(format!("{h}x{w}")), &x, |b, x| {
            b.iter(|| gen.forward(black_box(x), &noise).expect("forward"))
        });
    }
    group.finish();
}

pub fn pyramid_pooling(c: &mut Criterion) {
    let mut group = c.benchmark_group("spp_pool");
    for &(h, w) in &[(16, 16), (33, 47), (64, 64)] {
        let maps = Tensor::randn(0f32, 1.0, (1, 64, h, w), &Device::Cpu).expect("maps");
        group.bench_with_input(BenchmarkId::from_parameter(format!("{h}x{w}")), &maps, |b, m| {
            b.iter(|| spp_pool(black_box(m), 4).expect("pool"))
        });
    }
    group.finish();
}

pub fn ssim(c: &mut Criterion) {
    let mut group = c.benchmark_group("ssim_loss");
    for &s in &[64, 256] {
        let (a, b) = (tensor(s, s), (tensor(s, s) * 0.9).expect("scaled"));
        group.throughput(Throughput::Elements((s * s) as u64));
        group.bench_function(BenchmarkId::from_parameter(s), |bench| {
            bench.iter(|| ssim_loss(black_box(&a), black_box(&b)).expect("ssim"))
        });
    }
    group.finish();
}

pub fn train_step(c: &mut Criterion) {
    let model = ModelConfig::single(
        GeneratorSpec::ur_net_7().scaled_widths(8),
        DiscriminatorSpec::default().scaled_widths(8),
    );
    let mut trainer = Trainer::new(model, TrainConfig::default()).expect("trainer");
    let haze = scene(64, 64);
    let clear = haze.map(Domain::UnitSigned, |v| v * 0.5).expect("clear");
    let mut group = c.benchmark_group("train_step");
    group.sample_size(10);
    group.bench_function("ur_net_7_w8_64x64", |b| {
        b.iter(|| trainer.train_step(black_box(&haze), black_box(&clear)).expect("step"))
    });
    group.finish();
}

pub fn benchmarks(c: &mut Criterion) {
    generator_forward(c);
    pyramid_pooling(c);
    ssim(c);
    train_step(c);
}
