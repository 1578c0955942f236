//! Training objectives: consistency, adversarial, L1, SSIM and PSNR losses and
//! their weighted total.
//!
//! Image losses take `(1, 3, h, w)` tensors on the `[-1, 1]` network scale and
//! return scalar (`()`) tensors that can be differentiated.

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Log-domain features are clipped to this range before exponentiation.
pub const FEATURE_CLAMP: (f64, f64) = (-20.0, 10.0);
/// Probabilities are kept in `[EPS, 1 - EPS]` before taking logs.
pub const PROB_EPS: f64 = 1e-7;
pub const MSE_FLOOR: f64 = 1e-10;
pub const RANGE_FLOOR: f64 = 1e-6;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
/// Dynamic range of the `[-1, 1]` network scale.
pub const NETWORK_RANGE: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    /// Adversarial.
    pub lambda1: f64,
    /// L1.
    pub lambda2: f64,
    /// SSIM.
    pub lambda3: f64,
    /// PSNR.
    pub lambda4: f64,
    /// Generator weight decay (multi-scale training only).
    pub lambda_wd: f64,
    /// PSNR normalizer.
    pub thresh: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 100.0,
            lambda3: 100.0,
            lambda4: 100.0,
            lambda_wd: 0.001,
            thresh: 40.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda1,
            self.lambda2,
            self.lambda3,
            self.lambda4,
            self.lambda_wd,
        ];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidArgument(format!("loss weights must be finite and nonnegative: {self:?}")));
        }
        if !(self.thresh.is_finite() && self.thresh > 0.0) {
            return Err(Error::InvalidArgument(format!("PSNR threshold must be positive, got {}", self.thresh)));
        }
        Ok(())
    }
}

/// Unweighted loss values of one step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub consistency: f64,
    pub adversarial_g: f64,
    pub adversarial_d: f64,
    pub l1: f64,
    pub ssim_loss: f64,
    pub psnr_loss: f64,
    /// `||w||^2` of the generator weights; zero unless weight decay is active.
    pub weight_decay: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn terms(&self) -> [(&'static str, f64); 8] {
        [
            ("consistency", self.consistency),
            ("adversarial_g", self.adversarial_g),
            ("adversarial_d", self.adversarial_d),
            ("l1", self.l1),
            ("ssim_loss", self.ssim_loss),
            ("psnr_loss", self.psnr_loss),
            ("weight_decay", self.weight_decay),
            ("total", self.total),
        ]
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.terms().iter().find(|(_, v)| !v.is_finite()) {
            Some((name, v)) => Err(Error::NonFinite(format!("loss term {name} = {v}"))),
            None => Ok(()),
        }
    }

    /// Field-wise sum (adds totals too).
    pub fn accumulate(&mut self, other: &LossBreakdown) {
        self.consistency += other.consistency;
        self.adversarial_g += other.adversarial_g;
        self.adversarial_d += other.adversarial_d;
        self.l1 += other.l1;
        self.ssim_loss += other.ssim_loss;
        self.psnr_loss += other.psnr_loss;
        self.weight_decay += other.weight_decay;
        self.total += other.total;
    }
}

fn same_dims(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::shape(op, format!("{:?}", a.dims()), format!("{:?}", b.dims())));
    }
    Ok(())
}

pub(crate) fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// `exp` of a log-domain map after clipping.
pub fn clamped_exp(x: &Tensor) -> Result<Tensor> {
    Ok(x.clamp(FEATURE_CLAMP.0, FEATURE_CLAMP.1)?.exp()?)
}

/// `mean |I_re - exp(I^r) - J_ge + exp(J^g)|`.
pub fn consistency_loss(haze: &Tensor, dehazed: &Tensor, i_r: &Tensor, j_g: &Tensor) -> Result<Tensor> {
    same_dims("consistency_loss", haze, dehazed)?;
    same_dims("consistency_loss", haze, i_r)?;
    same_dims("consistency_loss", haze, j_g)?;
    let r = ((haze - clamped_exp(i_r)?)? - dehazed)?;
    let r = (r + clamped_exp(j_g)?)?;
    Ok(r.abs()?.mean_all()?)
}

/// `(d_loss, g_loss)` with `d_loss = -[log D(real) + log(1 - D(fake))]` and the
/// non-saturating generator loss `g_loss = -log D(fake)`.
pub fn adversarial_losses(d_real: &Tensor, d_fake: &Tensor) -> Result<(Tensor, Tensor)> {
    let guard = |p: &Tensor| p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let real = guard(d_real)?;
    let fake = guard(d_fake)?;
    let d_loss = (real.log()? + fake.affine(-1.0, 1.0)?.log()?)?.neg()?;
    let g_loss = fake.log()?.neg()?;
    Ok((d_loss, g_loss))
}

/// Discriminator loss on its own (used when only `D` is being updated).
pub fn discriminator_loss(d_real: &Tensor, d_fake: &Tensor) -> Result<Tensor> {
    Ok(adversarial_losses(d_real, d_fake)?.0)
}

pub fn generator_adversarial_loss(d_fake: &Tensor) -> Result<Tensor> {
    let fake = d_fake.clamp(PROB_EPS, 1.0 - PROB_EPS)?;
    Ok(fake.log()?.neg()?)
}

pub fn l1_loss(target: &Tensor, output: &Tensor) -> Result<Tensor> {
    same_dims("l1_loss", target, output)?;
    Ok((target - output)?.abs()?.mean_all()?)
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Mean local SSIM over all fully-contained 11x11 Gaussian windows, averaged
/// over channels, for images with dynamic range `range`.
pub fn ssim(a: &Tensor, b: &Tensor, range: f64) -> Result<Tensor> {
    same_dims("ssim", a, b)?;
    let (n, c, h, w) = a.dims4()?;
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
    let kx = Tensor::from_slice(&taps, (1, 1, 1, SSIM_WINDOW), a.device())?.to_dtype(a.dtype())?;
    let ky = kx.reshape((1, 1, SSIM_WINDOW, 1))?;
    let stacked = Tensor::cat(&[a, b, &a.sqr()?, &b.sqr()?, &(a * b)?], 0)?;
    let stacked = stacked.reshape((5 * n * c, 1, h, w))?;
    let filtered = stacked.conv2d(&kx, 0, 1, 1, 1)?.conv2d(&ky, 0, 1, 1, 1)?;
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let filtered = filtered.reshape((5, n * c, oh, ow))?;
    let get = |i: usize| filtered.get(i);
    let (mu_a, mu_b, e_aa, e_bb, e_ab) = (get(0)?, get(1)?, get(2)?, get(3)?, get(4)?);
    let c1 = (0.01 * range).powi(2);
    let c2 = (0.03 * range).powi(2);
    let mu_ab = (&mu_a * &mu_b)?;
    let mu_aa = mu_a.sqr()?;
    let mu_bb = mu_b.sqr()?;
    let var_a = (e_aa - &mu_aa)?;
    let var_b = (e_bb - &mu_bb)?;
    let cov = (e_ab - &mu_ab)?;
    let num = ((mu_ab * 2.0)? + c1)?.mul(&((cov * 2.0)? + c2)?)?;
    let den = ((mu_aa + mu_bb)? + c1)?.mul(&((var_a + var_b)? + c2)?)?;
    Ok((num / den)?.mean_all()?)
}

pub fn ssim_loss(target: &Tensor, output: &Tensor) -> Result<Tensor> {
    Ok(ssim(target, output, NETWORK_RANGE)?.affine(-1.0, 1.0)?)
}

/// `10 log10((max(target) - min(target))^2 / MSE)`, with the dynamic range taken
/// from the target image.
pub fn psnr_value(target: &Tensor, output: &Tensor) -> Result<Tensor> {
    same_dims("psnr_value", target, output)?;
    let t = target.detach();
    let range = (scalar(&t.max_all()?)? - scalar(&t.min_all()?)?).max(RANGE_FLOOR);
    let mse = (target - output)?.sqr()?.mean_all()?.maximum(MSE_FLOOR)?;
    let k = 10.0 / std::f64::consts::LN_10;
    Ok(mse.log()?.affine(-k, k * (range * range).ln())?)
}

/// `1 - PSNR / thresh`.
pub fn psnr_loss(target: &Tensor, output: &Tensor, thresh: f64) -> Result<Tensor> {
    Ok(psnr_value(target, output)?.affine(-1.0 / thresh, 1.0)?)
}

/// Unweighted generator-side terms as differentiable scalars.
#[derive(Debug, Clone)]
pub struct GeneratorTerms {
    pub consistency: Tensor,
    pub adversarial_g: Tensor,
    pub l1: Tensor,
    pub ssim_loss: Tensor,
    pub psnr_loss: Tensor,
}

impl GeneratorTerms {
    /// All single-output terms for one (haze, clear, output) triple given
    /// `D(haze, output)`.
    pub fn compute(
        haze: &Tensor,
        clear: &Tensor,
        dehazed: &Tensor,
        i_r: &Tensor,
        j_g: &Tensor,
        d_fake: &Tensor,
        thresh: f64,
    ) -> Result<Self> {
        Ok(Self {
            consistency: consistency_loss(haze, dehazed, i_r, j_g)?,
            adversarial_g: generator_adversarial_loss(d_fake)?,
            l1: l1_loss(clear, dehazed)?,
            ssim_loss: ssim_loss(clear, dehazed)?,
            psnr_loss: psnr_loss(clear, dehazed, thresh)?,
        })
    }

    /// Weighted objective without weight decay.
    pub fn weighted(&self, w: &LossWeights) -> Result<Tensor> {
        let t = (&self.consistency + (&self.adversarial_g * w.lambda1)?)?;
        let t = (t + (&self.l1 * w.lambda2)?)?;
        let t = (t + (&self.ssim_loss * w.lambda3)?)?;
        Ok((t + (&self.psnr_loss * w.lambda4)?)?)
    }

    pub fn values(&self) -> Result<LossParts> {
        Ok(LossParts {
            consistency: scalar(&self.consistency)?,
            adversarial_g: scalar(&self.adversarial_g)?,
            l1: scalar(&self.l1)?,
            ssim_loss: scalar(&self.ssim_loss)?,
            psnr_loss: scalar(&self.psnr_loss)?,
            weight_decay: 0.0,
        })
    }
}

/// Plain-number inputs of the weighted total.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub consistency: f64,
    pub adversarial_g: f64,
    pub l1: f64,
    pub ssim_loss: f64,
    pub psnr_loss: f64,
    /// `||w||^2`; pass 0 when weight decay is not in use.
    pub weight_decay: f64,
}

/// `consistency + l1 adv + l2 L1 + l3 SSIM + l4 PSNR + l_wd ||w||^2`.
pub fn total_generator_loss(parts: &LossParts, weights: &LossWeights) -> Result<LossBreakdown> {
    let named = [
        ("consistency", parts.consistency),
        ("adversarial_g", parts.adversarial_g),
        ("l1", parts.l1),
        ("ssim_loss", parts.ssim_loss),
        ("psnr_loss", parts.psnr_loss),
        ("weight_decay", parts.weight_decay),
    ];
    if let Some((name, v)) = named.iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite(format!("loss term {name} = {v}")));
    }
    let total = parts.consistency
        + weights.lambda1 * parts.adversarial_g
        + weights.lambda2 * parts.l1
        + weights.lambda3 * parts.ssim_loss
        + weights.lambda4 * parts.psnr_loss
        + weights.lambda_wd * parts.weight_decay;
    Ok(LossBreakdown {
        consistency: parts.consistency,
        adversarial_g: parts.adversarial_g,
        adversarial_d: 0.0,
        l1: parts.l1,
        ssim_loss: parts.ssim_loss,
        psnr_loss: parts.psnr_loss,
        weight_decay: parts.weight_decay,
        total,
    })
}
