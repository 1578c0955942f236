//! Gradient-check scenarios shared by the gradient-check and acceptance
//! targets. Each returns the worst relative error over its variables.

use candle_core::{DType, Device, Tensor, Var};
use dehaze_core::discriminator::{spp_pool, Discriminator, DiscriminatorSpec};
use dehaze_core::generator::{Generator, GeneratorSpec};
use dehaze_core::losses::{self, GeneratorTerms, LossWeights};
use dehaze_core::multiscale::reconstruct;
use dehaze_core::nn::NoiseSource;
use dehaze_core::params::ParamStore;
use dehaze_core::resize::resize_tensor;

use super::{grad_check, random_vec, rng, var};

pub const TOL: f64 = 1e-3;
const STEP: f64 = 1e-6;

fn worst(errs: &[(&str, (f64, usize))]) -> f64 {
    errs.iter().map(|(_, (e, _))| *e).fold(0.0, f64::max)
}

fn image_var(seed: u64, h: usize, w: usize, lo: f64, hi: f64) -> Var {
    var(&random_vec(&mut rng(seed), 3 * h * w, lo, hi), &[1, 3, h, w])
}

pub fn consistency_loss_gradient() -> f64 {
    let mut errs = Vec::new();
    let haze = image_var(1, 6, 7, -1.0, 1.0);
    let out = image_var(2, 6, 7, -1.0, 1.0);
    let i_r = image_var(3, 6, 7, -2.0, 0.5);
    let j_g = image_var(4, 6, 7, -2.0, 0.5);
    let f = || losses::consistency_loss(haze.as_tensor(), out.as_tensor(), i_r.as_tensor(), j_g.as_tensor()).unwrap();
    errs.push(("consistency", grad_check(&[out.clone(), i_r.clone(), j_g.clone()], &f, 64, STEP, 0)));
    worst(&errs)
}

pub fn l1_loss_gradient() -> f64 {
    let mut errs = Vec::new();
    let a = image_var(5, 8, 8, -1.0, 1.0);
    let b = image_var(6, 8, 8, -1.0, 1.0);
    let f = || losses::l1_loss(a.as_tensor(), b.as_tensor()).unwrap();
    errs.push(("l1", grad_check(&[a.clone(), b.clone()], &f, 64, STEP, 0)));
    worst(&errs)
}

pub fn ssim_loss_gradient() -> f64 {
    let mut errs = Vec::new();
    let a = image_var(7, 16, 16, -1.0, 1.0);
    let b = image_var(8, 16, 16, -1.0, 1.0);
    let f = || losses::ssim_loss(a.as_tensor(), b.as_tensor()).unwrap();
    errs.push(("ssim", grad_check(&[a.clone(), b.clone()], &f, 64, STEP, 0)));
    worst(&errs)
}

pub fn psnr_loss_gradient() -> f64 {
    let mut errs = Vec::new();
    let a = image_var(9, 8, 8, -1.0, 1.0);
    let b = image_var(10, 8, 8, -1.0, 1.0);
    // The dynamic range comes from the target and is held fixed, so only the
    // output gradient is compared.
    let f = || losses::psnr_loss(a.as_tensor(), b.as_tensor(), 40.0).unwrap();
    errs.push(("psnr", grad_check(&[b.clone()], &f, 64, STEP, 0)));
    worst(&errs)
}

pub fn adversarial_loss_gradients() -> f64 {
    let mut errs = Vec::new();
    let real = var(&[0.73], &[]);
    let fake = var(&[0.31], &[]);
    let d = || losses::discriminator_loss(real.as_tensor(), fake.as_tensor()).unwrap();
    errs.push(("d_loss", grad_check(&[real.clone(), fake.clone()], &d, 4, STEP, 0)));
    let g = || losses::generator_adversarial_loss(fake.as_tensor()).unwrap();
    errs.push(("g_loss", grad_check(&[fake.clone()], &g, 4, STEP, 0)));
    worst(&errs)
}

pub fn total_objective_gradient() -> f64 {
    let mut errs = Vec::new();
    let haze = image_var(11, 16, 16, -1.0, 1.0);
    let clear = image_var(12, 16, 16, -1.0, 1.0);
    let out = image_var(13, 16, 16, -0.9, 0.9);
    let i_r = image_var(14, 16, 16, -2.0, 0.5);
    let j_g = image_var(15, 16, 16, -2.0, 0.5);
    let d_fake = var(&[0.4], &[]);
    let weights = LossWeights::default();
    let f = || {
        GeneratorTerms::compute(
            haze.as_tensor(),
            clear.as_tensor(),
            out.as_tensor(),
            i_r.as_tensor(),
            j_g.as_tensor(),
            d_fake.as_tensor(),
            weights.thresh,
        )
        .unwrap()
        .weighted(&weights)
        .unwrap()
    };
    errs.push(("total", grad_check(&[out.clone(), i_r.clone(), j_g.clone(), d_fake.clone()], &f, 48, STEP, 0)));
    worst(&errs)
}

pub fn weight_decay_gradient() -> f64 {
    let mut errs = Vec::new();
    let mut store = ParamStore::new(DType::F64, Device::Cpu, 3);
    store.normal("a.weight", &[3, 4], 0.5).unwrap();
    store.normal("a.bias", &[4], 0.5).unwrap();
    let vars: Vec<Var> = store.iter().map(|(_, v)| v.clone()).collect();
    let f = || store.weight_sq_norm().unwrap();
    errs.push(("weight decay", grad_check(&vars, &f, 16, STEP, 0)));
    worst(&errs)
}

pub fn reconstruction_and_resize_gradients() -> f64 {
    let mut errs = Vec::new();
    let haze = image_var(16, 9, 7, -1.0, 1.0);
    let i_r = image_var(17, 9, 7, -2.0, 0.5);
    let m = image_var(18, 9, 7, -1.0, 1.0);
    let weights = Tensor::from_vec(random_vec(&mut rng(19), 3 * 9 * 7, -1.0, 1.0), (1, 3, 9, 7), &Device::Cpu).unwrap();
    let f = || (reconstruct(haze.as_tensor(), i_r.as_tensor(), m.as_tensor()).unwrap() * &weights).unwrap().sum_all().unwrap();
    errs.push(("reconstruct", grad_check(&[haze.clone(), i_r.clone(), m.clone()], &f, 48, STEP, 0)));

    let small = image_var(20, 5, 4, -1.0, 1.0);
    let f = || (resize_tensor(small.as_tensor(), 9, 7).unwrap() * &weights).unwrap().sum_all().unwrap();
    errs.push(("resize", grad_check(&[small.clone()], &f, 60, STEP, 0)));
    worst(&errs)
}

pub fn spp_gradient() -> f64 {
    let mut errs = Vec::new();
    let x = var(&random_vec(&mut rng(21), 2 * 7 * 5, -1.0, 1.0), &[1, 2, 7, 5]);
    let w = Tensor::from_vec(random_vec(&mut rng(22), 2 * 14, -1.0, 1.0), (1, 28), &Device::Cpu).unwrap();
    let f = || (spp_pool(x.as_tensor(), 3).unwrap() * &w).unwrap().sum_all().unwrap();
    errs.push(("spp", grad_check(&[x.clone()], &f, 70, STEP, 0)));
    worst(&errs)
}

pub fn miniature_generator_gradient() -> f64 {
    let mut errs = Vec::new();
    let mut spec = GeneratorSpec::canonical(2, false);
    spec.encoder_channels = vec![3, 4, 4];
    let mut store = ParamStore::new(DType::F64, Device::Cpu, 7);
    let g = Generator::new(&spec, &mut store, "g").unwrap();
    // Widen the initialization so the activations are far from kinks.
    for (name, v) in store.iter() {
        let t = (v.as_tensor() * 10.0).unwrap();
        store.set(name, &t).unwrap();
    }
    let haze = Tensor::from_vec(random_vec(&mut rng(23), 3 * 36, -1.0, 1.0), (1, 3, 6, 6), &Device::Cpu).unwrap();
    let r1 = Tensor::from_vec(random_vec(&mut rng(24), 3 * 36, -1.0, 1.0), (1, 3, 6, 6), &Device::Cpu).unwrap();
    let r2 = Tensor::from_vec(random_vec(&mut rng(25), 3 * 36, -1.0, 1.0), (1, 3, 6, 6), &Device::Cpu).unwrap();
    let noise = NoiseSource::new(11);
    let f = || {
        let out = g.forward(&haze, &noise).unwrap();
        let a = (out.dehazed * &r1).unwrap().sum_all().unwrap();
        let b = (out.haze_map * &r2).unwrap().sum_all().unwrap();
        (a + b).unwrap()
    };
    let vars: Vec<Var> = store.iter().map(|(_, v)| v.clone()).collect();
    errs.push(("generator", grad_check(&vars, &f, 12, STEP, 1)));
    worst(&errs)
}

pub fn miniature_discriminator_gradient() -> f64 {
    let mut errs = Vec::new();
    let spec = DiscriminatorSpec {
        conv_channels: [2, 3, 3, 4],
        spp_levels: 2,
    };
    let mut store = ParamStore::new(DType::F64, Device::Cpu, 8);
    let d = Discriminator::new(&spec, &mut store, "d").unwrap();
    for (name, v) in store.iter() {
        let t = (v.as_tensor() * 10.0).unwrap();
        store.set(name, &t).unwrap();
    }
    let cond = Tensor::from_vec(random_vec(&mut rng(26), 3 * 11 * 13, -1.0, 1.0), (1, 3, 11, 13), &Device::Cpu).unwrap();
    let cand = var(&random_vec(&mut rng(27), 3 * 11 * 13, -1.0, 1.0), &[1, 3, 11, 13]);
    let f = || d.logit(&cond, cand.as_tensor()).unwrap();
    let mut vars: Vec<Var> = store.iter().map(|(_, v)| v.clone()).collect();
    vars.push(cand.clone());
    errs.push(("discriminator", grad_check(&vars, &f, 12, STEP, 2)));
    worst(&errs)
}

/// Every scenario with its name.
pub fn all() -> Vec<(&'static str, fn() -> f64)> {
    vec![
        ("consistency_loss_gradient", consistency_loss_gradient),
        ("l1_loss_gradient", l1_loss_gradient),
        ("ssim_loss_gradient", ssim_loss_gradient),
        ("psnr_loss_gradient", psnr_loss_gradient),
        ("adversarial_loss_gradients", adversarial_loss_gradients),
        ("total_objective_gradient", total_objective_gradient),
        ("weight_decay_gradient", weight_decay_gradient),
        ("reconstruction_and_resize_gradients", reconstruction_and_resize_gradients),
        ("spp_gradient", spp_gradient),
        ("miniature_generator_gradient", miniature_generator_gradient),
        ("miniature_discriminator_gradient", miniature_discriminator_gradient),
    ]
}
