//! Bicubic resampling to exact target sizes.
//!
//! Resampling is separable and linear, so it is expressed as `R_h X R_w^T` with
//! dense interpolation matrices; on tensors that keeps it differentiable.

use candle_core::Tensor;

use crate::error::{Error, Result};
use crate::image::{Image, CHANNELS};

/// Keys cubic convolution coefficient.
const CUBIC_A: f64 = -0.5;

fn cubic(x: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        ((CUBIC_A + 2.0) * x - (CUBIC_A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((CUBIC_A * x - 5.0 * CUBIC_A) * x + 8.0 * CUBIC_A) * x - 4.0 * CUBIC_A
    } else {
        0.0
    }
}

/// `(dst, src)` row-major interpolation matrix. Pixel centers are aligned
/// (`src = (dst + 0.5) * src_len / dst_len - 0.5`) and taps falling outside the
/// source are clamped to the border, so every row sums to one.
pub fn interpolation_matrix(src: usize, dst: usize) -> Vec<f64> {
    let mut m = vec![0.0; dst * src];
    let scale = src as f64 / dst as f64;
    for i in 0..dst {
        let x = (i as f64 + 0.5) * scale - 0.5;
        let base = x.floor() as isize;
        let frac = x - base as f64;
        for k in -1..=2isize {
            let w = cubic(frac - k as f64);
            let j = (base + k).clamp(0, src as isize - 1) as usize;
            m[i * src + j] += w;
        }
    }
    m
}

fn check_target(h: usize, w: usize) -> Result<()> {
    if h == 0 || w == 0 {
        return Err(Error::InvalidArgument(format!("resize target must be positive, got {h}x{w}")));
    }
    Ok(())
}

/// Resizes a `(.., h, w)` tensor (rank 4) to `(th, tw)`.
pub fn resize_tensor(x: &Tensor, th: usize, tw: usize) -> Result<Tensor> {
    check_target(th, tw)?;
    let (_, _, h, w) = x.dims4()?;
    if (h, w) == (th, tw) {
        return Ok(x.clone());
    }
    let rh = Tensor::from_vec(interpolation_matrix(h, th), (th, h), x.device())?.to_dtype(x.dtype())?;
    let rw = Tensor::from_vec(interpolation_matrix(w, tw), (tw, w), x.device())?
        .to_dtype(x.dtype())?
        .t()?;
    let y = rh.broadcast_matmul(x)?;
    Ok(y.broadcast_matmul(&rw)?)
}

/// Resizes an image. Results are clamped back into the image's domain, since
/// cubic kernels overshoot near edges.
pub fn resize_image(img: &Image, th: usize, tw: usize) -> Result<Image> {
    check_target(th, tw)?;
    let (h, w) = img.dims();
    if (h, w) == (th, tw) {
        return Ok(img.clone());
    }
    let rh = interpolation_matrix(h, th);
    let rw = interpolation_matrix(w, tw);
    let (lo, hi) = img.domain().range();
    let mut out = Vec::with_capacity(CHANNELS * th * tw);
    let mut tmp = vec![0.0; th * w];
    for c in 0..CHANNELS {
        let plane = img.channel(c);
        tmp.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..th {
            for k in 0..h {
                let r = rh[i * h + k];
                if r != 0.0 {
                    let src = &plane[k * w..(k + 1) * w];
                    let dst = &mut tmp[i * w..(i + 1) * w];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += r * s;
                    }
                }
            }
        }
        for i in 0..th {
            let row = &tmp[i * w..(i + 1) * w];
            for j in 0..tw {
                let coeffs = &rw[j * w..(j + 1) * w];
                let v: f64 = coeffs.iter().zip(row).map(|(a, b)| a * b).sum();
                out.push(v.clamp(lo, hi));
            }
        }
    }
    Image::new(th, tw, img.domain(), out)
}

/// Size after `k` ceil-halvings.
pub fn pyramid_size(h: usize, w: usize, k: u32) -> (usize, usize) {
    let d = 1usize << k;
    (h.div_ceil(d), w.div_ceil(d))
}
