//! Independent scalar-loop reference implementations and helpers shared by the
//! integration test targets. Nothing here calls the library's own numerics.

#![allow(dead_code)]

pub mod gradients;

use candle_core::{DType, Device, Tensor, Var};
use dehaze_core::image::{Domain, Image};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize, domain: Domain) -> Image {
    let (lo, hi) = domain.range();
    let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (-3.0, 3.0) };
    let data: Vec<f64> = (0..3 * h * w).map(|_| rng.random_range(lo..=hi)).collect();
    Image::new(h, w, domain, data).unwrap()
}

/// Random 8-bit image on the byte scale.
pub fn random_byte_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Image {
    let data: Vec<f64> = (0..3 * h * w).map(|_| rng.random_range(0..=255u32) as f64).collect();
    Image::new(h, w, Domain::ByteScale, data).unwrap()
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

pub fn tensor(data: &[f64], h: usize, w: usize) -> Tensor {
    Tensor::from_slice(data, (1, 3, h, w), &Device::Cpu).unwrap()
}

pub fn to_vec(t: &Tensor) -> Vec<f64> {
    t.to_dtype(DType::F64).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap()
}

pub fn scalar(t: &Tensor) -> f64 {
    t.to_dtype(DType::F64).unwrap().to_scalar::<f64>().unwrap()
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

fn clip_exp(v: f64) -> f64 {
    v.clamp(-20.0, 10.0).exp()
}

pub fn consistency(haze: &[f64], out: &[f64], i_r: &[f64], j_g: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..haze.len() {
        s += (haze[i] - clip_exp(i_r[i]) - out[i] + clip_exp(j_g[i])).abs();
    }
    s / haze.len() as f64
}

pub fn l1(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]).abs();
    }
    s / a.len() as f64
}

pub fn mse(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]) * (a[i] - b[i]);
    }
    s / a.len() as f64
}

/// `1 - 10 log10(range^2 / mse) / thresh`, range from the target.
pub fn psnr_loss(target: &[f64], out: &[f64], thresh: f64) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in target {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let range = (hi - lo).max(1e-6);
    let m = mse(target, out).max(1e-10);
    1.0 - 10.0 * (range * range / m).log10() / thresh
}

/// 2-D Gaussian window built directly (not as an outer product of 1-D taps).
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let mut w = vec![0.0; size * size];
    let mut total = 0.0;
    for y in 0..size {
        for x in 0..size {
            let d2 = (y as f64 - c).powi(2) + (x as f64 - c).powi(2);
            let v = (-d2 / (2.0 * sigma * sigma)).exp();
            w[y * size + x] = v;
            total += v;
        }
    }
    for v in &mut w {
        *v /= total;
    }
    w
}

/// Mean SSIM over every fully-contained 11x11 window of each channel, then
/// over channels. `a` and `b` are planar `3 x h x w`.
pub fn ssim(a: &[f64], b: &[f64], h: usize, w: usize, range: f64) -> f64 {
    let k = 11;
    let win = gaussian_window(k, 1.5);
    let c1 = (0.01 * range) * (0.01 * range);
    let c2 = (0.03 * range) * (0.03 * range);
    let mut per_channel = 0.0;
    for c in 0..3 {
        let pa = &a[c * h * w..(c + 1) * h * w];
        let pb = &b[c * h * w..(c + 1) * h * w];
        let mut acc = 0.0;
        let mut count = 0usize;
        for y0 in 0..=h - k {
            for x0 in 0..=w - k {
                let (mut ma, mut mb) = (0.0, 0.0);
                for dy in 0..k {
                    for dx in 0..k {
                        let g = win[dy * k + dx];
                        ma += g * pa[(y0 + dy) * w + x0 + dx];
                        mb += g * pb[(y0 + dy) * w + x0 + dx];
                    }
                }
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for dy in 0..k {
                    for dx in 0..k {
                        let g = win[dy * k + dx];
                        let da = pa[(y0 + dy) * w + x0 + dx] - ma;
                        let db = pb[(y0 + dy) * w + x0 + dx] - mb;
                        va += g * da * da;
                        vb += g * db * db;
                        cov += g * da * db;
                    }
                }
                acc += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
        per_channel += acc / count as f64;
    }
    per_channel / 3.0
}

// ---------------------------------------------------------------------------
// Metrics (byte scale)
// ---------------------------------------------------------------------------

pub fn nrmse(reference: &[f64], test: &[f64]) -> f64 {
    let num = mse(reference, test).sqrt();
    let den = (reference.iter().map(|v| v * v).sum::<f64>() / reference.len() as f64).sqrt();
    num / den
}

pub fn psnr_255(a: &[f64], b: &[f64]) -> f64 {
    let m = mse(a, b);
    if m == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (255.0f64 * 255.0 / m).log10()
    }
}

// ---------------------------------------------------------------------------
// Pyramid pooling
// ---------------------------------------------------------------------------

/// Max over every cell of every level by exhaustive scan, using the
/// floor/ceil partition of each axis. `map` is `c x h x w`.
pub fn spp(map: &[f64], c: usize, h: usize, w: usize, levels: usize) -> Vec<f64> {
    let mut out = Vec::new();
    for n in 1..=levels {
        for ch in 0..c {
            for i in 0..n {
                for j in 0..n {
                    let (y0, y1) = ((i * h) / n, ((i + 1) * h + n - 1) / n);
                    let (x0, x1) = ((j * w) / n, ((j + 1) * w + n - 1) / n);
                    let mut m = f64::NEG_INFINITY;
                    for y in 0..h {
                        for x in 0..w {
                            if y >= y0 && y < y1 && x >= x0 && x < x1 {
                                m = m.max(map[ch * h * w + y * w + x]);
                            }
                        }
                    }
                    out.push(m);
                }
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Scattering model
// ---------------------------------------------------------------------------

pub fn scatter(j: f64, t: f64, alpha: f64) -> f64 {
    j * t + alpha * (1.0 - t)
}

// ---------------------------------------------------------------------------
// Finite differences
// ---------------------------------------------------------------------------

/// Compares the analytic gradient of `f` with central differences for up to
/// `samples` entries of every variable. Returns the worst per-variable relative
/// error `||g_a - g_n|| / max(||g_a||, ||g_n||)` (or the absolute error when both
/// are tiny) along with that variable's index.
pub fn grad_check(vars: &[Var], f: &dyn Fn() -> Tensor, samples: usize, step: f64, seed: u64) -> (f64, usize) {
    let loss = f();
    let grads = loss.backward().unwrap();
    let mut r = rng(seed);
    let mut worst = (0.0f64, 0usize);
    for (vi, var) in vars.iter().enumerate() {
        let analytic = grads
            .get(var.as_tensor())
            .map(to_vec)
            .unwrap_or_else(|| vec![0.0; var.elem_count()]);
        let base = to_vec(var.as_tensor());
        let n = base.len();
        let picks: Vec<usize> = if n <= samples {
            (0..n).collect()
        } else {
            (0..samples).map(|_| r.random_range(0..n)).collect()
        };
        let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
        for &i in &picks {
            let mut plus = base.clone();
            plus[i] += step;
            var.set(&Tensor::from_vec(plus, var.dims(), &Device::Cpu).unwrap()).unwrap();
            let fp = scalar(&f());
            let mut minus = base.clone();
            minus[i] -= step;
            var.set(&Tensor::from_vec(minus, var.dims(), &Device::Cpu).unwrap()).unwrap();
            let fm = scalar(&f());
            let numeric = (fp - fm) / (2.0 * step);
            diff2 += (numeric - analytic[i]).powi(2);
            a2 += analytic[i].powi(2);
            n2 += numeric.powi(2);
        }
        var.set(&Tensor::from_vec(base, var.dims(), &Device::Cpu).unwrap()).unwrap();
        let scale = a2.sqrt().max(n2.sqrt());
        let err = if scale < 1e-9 { diff2.sqrt() } else { diff2.sqrt() / scale };
        if err > worst.0 {
            worst = (err, vi);
        }
    }
    worst
}

pub fn var(data: &[f64], shape: &[usize]) -> Var {
    Var::from_tensor(&Tensor::from_slice(data, shape, &Device::Cpu).unwrap()).unwrap()
}
