//! Full-reference image quality metrics on the byte scale and dataset reports.
//!
//! Conventions follow the common scientific-Python implementations: PSNR uses a
//! fixed data range of 255, NRMSE is normalized by the reference's RMS, and SSIM
//! uses an 11x11 Gaussian window (sigma 1.5) with population statistics.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::{byte_to_signed, signed_to_byte, PairSource};
use crate::error::{Error, Result};
use crate::image::{Domain, Image, CHANNELS};
use crate::losses::{gaussian_taps, SSIM_SIGMA, SSIM_WINDOW};

pub const DATA_RANGE: f64 = 255.0;

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_shape(b, "mse")?;
    let n = a.data().len() as f64;
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n)
}

/// `sqrt(mse(a, b)) / sqrt(mean(a^2))`; `a` is the reference.
pub fn nrmse(a: &Image, b: &Image) -> Result<f64> {
    let num = mse(a, b)?.sqrt();
    let n = a.data().len() as f64;
    let den = (a.data().iter().map(|v| v * v).sum::<f64>() / n).sqrt();
    if den == 0.0 {
        return Err(Error::InvalidArgument("NRMSE reference image is all zero".into()));
    }
    Ok(num / den)
}

/// `10 log10(255^2 / mse)`; `+inf` for identical images.
pub fn psnr_eval(a: &Image, b: &Image) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (DATA_RANGE * DATA_RANGE / m).log10())
}

/// Valid-mode separable filtering of one `h x w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        let src = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().zip(&src[x..x + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for (t, tap) in taps.iter().enumerate() {
            let src = &rows[(y + t) * ow..(y + t + 1) * ow];
            let dst = &mut out[y * ow..(y + 1) * ow];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += tap * s;
            }
        }
    }
    out
}

/// Windowed SSIM with dynamic range `range`, averaged over channels.
pub fn ssim_with_range(a: &Image, b: &Image, range: f64) -> Result<f64> {
    a.check_same_shape(b, "ssim")?;
    let (h, w) = a.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Undersized {
            what: "SSIM window",
            height: h,
            width: w,
            min_height: SSIM_WINDOW,
            min_width: SSIM_WINDOW,
        });
    }
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let c1 = (0.01 * range).powi(2);
    let c2 = (0.03 * range).powi(2);
    let mut total = 0.0;
    for c in 0..CHANNELS {
        let (x, y) = (a.channel(c), b.channel(c));
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(y).map(|(p, q)| p * q).collect();
        let f = |p: &[f64]| filter_valid(p, h, w, &taps);
        let (mx, my, exx, eyy, exy) = (f(x), f(y), f(&xx), f(&yy), f(&xy));
        let mut acc = 0.0;
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = exx[i] - ux * ux;
            let vy = eyy[i] - uy * uy;
            let cxy = exy[i] - ux * uy;
            acc += ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
        }
        total += acc / mx.len() as f64;
    }
    Ok(total / CHANNELS as f64)
}

/// SSIM on byte-scale images (`L = 255`).
pub fn ssim_eval(a: &Image, b: &Image) -> Result<f64> {
    ssim_with_range(a, b, DATA_RANGE)
}

/// Anything that maps a haze image (network domain) to a dehazed image of the
/// same size.
pub trait Dehazer {
    fn dehaze(&self, haze: &Image) -> Result<Image>;
}

/// Returns its input; scoring it gives the haze-vs-clear baseline.
#[derive(Debug, Clone, Copy, Default)]
pub struct Identity;

impl Dehazer for Identity {
    fn dehaze(&self, haze: &Image) -> Result<Image> {
        Ok(haze.clone())
    }
}

/// Quantizes a network-domain image to 8 bits and returns it on the byte scale.
pub fn quantize_to_bytes(img: &Image) -> Result<Image> {
    img.expect_domain(Domain::UnitSigned)?;
    img.map(Domain::ByteScale, |v| signed_to_byte(v) as f64)
}

/// Inverse of [`quantize_to_bytes`] for byte-valued images.
pub fn bytes_to_signed(img: &Image) -> Result<Image> {
    img.expect_domain(Domain::ByteScale)?;
    img.map(Domain::UnitSigned, |v| byte_to_signed(v.round().clamp(0.0, 255.0) as u8))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub id: String,
    pub mse: f64,
    pub nrmse: f64,
    /// `+inf` when the images are identical.
    pub psnr: f64,
    pub ssim: f64,
}

impl MetricsRow {
    pub fn score(id: impl Into<String>, reference: &Image, test: &Image) -> Result<Self> {
        Ok(Self {
            id: id.into(),
            mse: mse(reference, test)?,
            nrmse: nrmse(reference, test)?,
            psnr: psnr_eval(reference, test)?,
            ssim: ssim_eval(reference, test)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricMeans {
    pub mse: f64,
    pub nrmse: f64,
    /// Mean over finite rows only.
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_image: Vec<MetricsRow>,
    pub means: MetricMeans,
    pub n: usize,
    /// Rows with infinite PSNR, left out of the PSNR mean.
    pub psnr_infinite: usize,
    /// Ids that could not be scored.
    pub skipped: Vec<String>,
}

impl MetricsReport {
    pub fn from_rows(per_image: Vec<MetricsRow>, skipped: Vec<String>) -> Self {
        let n = per_image.len();
        let mean = |f: &dyn Fn(&MetricsRow) -> f64| {
            if n == 0 {
                f64::NAN
            } else {
                per_image.iter().map(f).sum::<f64>() / n as f64
            }
        };
        let finite: Vec<f64> = per_image.iter().map(|r| r.psnr).filter(|p| p.is_finite()).collect();
        let psnr = if finite.is_empty() {
            f64::INFINITY
        } else {
            finite.iter().sum::<f64>() / finite.len() as f64
        };
        let means = MetricMeans {
            mse: mean(&|r| r.mse),
            nrmse: mean(&|r| r.nrmse),
            psnr,
            ssim: mean(&|r| r.ssim),
        };
        Self {
            psnr_infinite: n - finite.len(),
            per_image,
            means,
            n,
            skipped,
        }
    }

    /// Tab-separated table with a header line; rows keyed by id.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("id\tmse\tnrmse\tpsnr\tssim\n");
        for r in &self.per_image {
            let _ = writeln!(s, "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}", r.id, r.mse, r.nrmse, r.psnr, r.ssim);
        }
        s
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "images scored: {}", self.n);
        let _ = writeln!(s, "MSE   {:>10.4}", self.means.mse);
        let _ = writeln!(s, "NRMSE {:>10.4}", self.means.nrmse);
        let _ = writeln!(s, "PSNR  {:>10.4} dB", self.means.psnr);
        let _ = writeln!(s, "SSIM  {:>10.4}", self.means.ssim);
        if self.psnr_infinite > 0 {
            let _ = writeln!(
                s,
                "note: {} identical image(s) have infinite PSNR and are excluded from the PSNR mean",
                self.psnr_infinite
            );
        }
        if !self.skipped.is_empty() {
            let _ = writeln!(s, "skipped: {}", self.skipped.join(", "));
        }
        s
    }
}

/// Dehazes every haze image at its native size, quantizes to 8 bits and scores
/// it against the clear image.
pub fn evaluate_dataset(dehazer: &dyn Dehazer, pairs: &dyn PairSource) -> Result<MetricsReport> {
    let mut rows = Vec::with_capacity(pairs.len());
    let mut skipped = Vec::new();
    for i in 0..pairs.len() {
        let pair = match pairs.get(i) {
            Ok(p) => p,
            Err(e) if e.is_data_error() => {
                let id = pairs.id(i);
                log::warn!("skipping {id}: {e}");
                skipped.push(id);
                continue;
            }
            Err(e) => return Err(e),
        };
        let out = dehazer.dehaze(&pair.haze)?;
        if out.dims() != pair.clear.dims() {
            return Err(Error::shape(
                "evaluate_dataset",
                format!("{}x{}", pair.clear.height(), pair.clear.width()),
                format!("{}x{}", out.height(), out.width()),
            ));
        }
        let reference = quantize_to_bytes(&pair.clear)?;
        let test = quantize_to_bytes(&out)?;
        match MetricsRow::score(pair.id.clone(), &reference, &test) {
            Ok(row) => rows.push(row),
            // Smaller than the SSIM window: not scorable, but not fatal either.
            Err(e @ Error::Undersized { .. }) => {
                log::warn!("skipping {}: {e}", pair.id);
                skipped.push(pair.id);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(MetricsReport::from_rows(rows, skipped))
}
