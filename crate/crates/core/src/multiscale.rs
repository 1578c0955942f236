//! Three-scale generator pyramid with learned haze-map fusion.
//!
//! Scales 1, 1/2 and 1/4 run UR-Net-7*, UR-Net-6* and UR-Net-5*. Their haze maps
//! are brought back to the native size, concatenated and mixed by a 1x1
//! convolution; the fused map gives a fourth, native-size output through the
//! exponential residual reconstruction `J = I - [exp(I^r) - exp(I^r - M)]`.

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::discriminator::{Discriminator, DiscriminatorSpec};
use crate::error::{Error, Result};
use crate::generator::{Generator, GeneratorOutput, GeneratorSpec};
use crate::image::Image;
use crate::losses::{clamped_exp, GeneratorTerms, LossBreakdown, LossWeights};
use crate::nn::{Conv2d, NoiseSource};
use crate::params::ParamStore;
use crate::resize::{pyramid_size, resize_image, resize_tensor};

pub const SCALES: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultiScaleSpec {
    /// Generators for scales 1, 1/2, 1/4.
    pub generators: [GeneratorSpec; SCALES],
}

impl MultiScaleSpec {
    /// UR-Net-7*, 6*, 5* with canonical widths divided by `width_divisor`.
    pub fn canonical(width_divisor: usize) -> Self {
        Self {
            generators: [7, 6, 5].map(|d| GeneratorSpec::canonical(d, true).scaled_widths(width_divisor)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for g in &self.generators {
            g.validate()?;
        }
        Ok(())
    }
}

/// Native, half and quarter scale versions of one image.
#[derive(Debug, Clone)]
pub struct Pyramid<T> {
    pub levels: [T; SCALES],
}

pub type PyramidInput = Pyramid<Image>;

/// Smallest native side for which the quarter scale is still `min_quarter`.
pub fn min_native_size(min_quarter: usize) -> usize {
    (min_quarter.max(1) - 1) * 4 + 1
}

pub fn build_pyramid(haze: &Image) -> Result<PyramidInput> {
    let (h, w) = haze.dims();
    if h < 4 || w < 4 {
        return Err(Error::Undersized {
            what: "image pyramid",
            height: h,
            width: w,
            min_height: 4,
            min_width: 4,
        });
    }
    let (h2, w2) = pyramid_size(h, w, 1);
    let (h3, w3) = pyramid_size(h, w, 2);
    Ok(Pyramid {
        levels: [haze.clone(), resize_image(haze, h2, w2)?, resize_image(haze, h3, w3)?],
    })
}

impl PyramidInput {
    pub fn to_tensors(&self, dtype: candle_core::DType, device: &candle_core::Device) -> Result<Pyramid<Tensor>> {
        Ok(Pyramid {
            levels: [
                self.levels[0].to_tensor(dtype, device)?,
                self.levels[1].to_tensor(dtype, device)?,
                self.levels[2].to_tensor(dtype, device)?,
            ],
        })
    }
}

/// `haze - [exp(i_r) - exp(i_r - m)]`.
pub fn reconstruct(haze: &Tensor, i_r: &Tensor, m: &Tensor) -> Result<Tensor> {
    let j_g = (i_r - m)?;
    Ok((haze - (clamped_exp(i_r)? - clamped_exp(&j_g)?)?)?)
}

#[derive(Debug, Clone)]
pub struct FusionOutputs {
    /// Per-scale generator outputs (haze-free 1..3 and haze maps 1..3).
    pub scales: [GeneratorOutput; SCALES],
    /// Fused haze map at native size.
    pub m_fusion: Tensor,
    /// `I^r_1 - M_fusion`.
    pub j_g_fusion: Tensor,
    /// Native-size fused output.
    pub hf_fusion: Tensor,
}

#[derive(Debug, Clone)]
pub struct MultiScaleGenerator {
    spec: MultiScaleSpec,
    generators: [Generator; SCALES],
    fusion: Conv2d,
}

impl MultiScaleGenerator {
    pub fn new(spec: &MultiScaleSpec, store: &mut ParamStore, prefix: &str) -> Result<Self> {
        spec.validate()?;
        let g = |i: usize, store: &mut ParamStore| Generator::new(&spec.generators[i], store, &format!("{prefix}.scale{}", i + 1));
        let generators = [g(0, store)?, g(1, store)?, g(2, store)?];
        let fusion = Conv2d::new(store, &format!("{prefix}.fusion"), 3 * SCALES, 3, 1, 1, true)?;
        let this = Self {
            spec: spec.clone(),
            generators,
            fusion,
        };
        this.set_fusion_average()?;
        Ok(this)
    }

    pub fn spec(&self) -> &MultiScaleSpec {
        &self.spec
    }

    pub fn generators(&self) -> &[Generator; SCALES] {
        &self.generators
    }

    pub fn fusion(&self) -> &Conv2d {
        &self.fusion
    }

    /// Sets the 1x1 fusion to `sum_k coeffs[k] * M_k` per channel, bias zero.
    pub fn set_fusion_weights(&self, coeffs: [f64; SCALES]) -> Result<()> {
        let mut w = vec![0.0f64; 3 * 3 * SCALES];
        for o in 0..3 {
            for (k, c) in coeffs.iter().enumerate() {
                w[o * 3 * SCALES + k * 3 + o] = *c;
            }
        }
        let wv = self.fusion.weight();
        wv.set(&Tensor::from_vec(w, (3, 3 * SCALES, 1, 1), wv.device())?.to_dtype(wv.dtype())?)?;
        if let Some(b) = self.fusion.bias() {
            b.set(&b.zeros_like()?)?;
        }
        Ok(())
    }

    pub fn set_fusion_average(&self) -> Result<()> {
        self.set_fusion_weights([1.0 / 3.0; SCALES])
    }

    pub fn forward(&self, pyramid: &Pyramid<Tensor>, noise: &NoiseSource) -> Result<FusionOutputs> {
        let (_, _, h, w) = pyramid.levels[0].dims4()?;
        for (k, t) in pyramid.levels.iter().enumerate().skip(1) {
            let want = pyramid_size(h, w, k as u32);
            let (_, _, th, tw) = t.dims4()?;
            if (th, tw) != want {
                return Err(Error::shape(
                    "MultiScaleGenerator::forward",
                    format!("scale {} of size {}x{}", k + 1, want.0, want.1),
                    format!("{th}x{tw}"),
                ));
            }
        }
        let run = |k: usize| self.generators[k].forward(&pyramid.levels[k], &noise.derive(k as u64 + 1));
        let scales = [run(0)?, run(1)?, run(2)?];
        let up2 = resize_tensor(&scales[1].haze_map, h, w)?;
        let up3 = resize_tensor(&scales[2].haze_map, h, w)?;
        let cat = Tensor::cat(&[&scales[0].haze_map, &up2, &up3], 1)?;
        let m_fusion = self.fusion.forward(&cat)?;
        let j_g_fusion = (&scales[0].i_r - &m_fusion)?;
        let hf_fusion = reconstruct(&pyramid.levels[0], &scales[0].i_r, &m_fusion)?;
        Ok(FusionOutputs {
            scales,
            m_fusion,
            j_g_fusion,
            hf_fusion,
        })
    }
}

/// The four (output, target, discriminator) triples' weighted objectives summed,
/// plus weight decay over the generator weights once.
///
/// Returns the differentiable total and the per-term sums. `discriminators` are
/// ordered scale 1, 1/2, 1/4, fusion.
pub fn multiscale_loss(
    outputs: &FusionOutputs,
    haze: &Pyramid<Tensor>,
    clear: &Pyramid<Tensor>,
    discriminators: &[Discriminator],
    weights: &LossWeights,
    generator_weight_sq: Option<&Tensor>,
) -> Result<(Tensor, LossBreakdown)> {
    let terms = multiscale_terms(outputs, haze, clear, discriminators, weights)?;
    let mut total: Option<Tensor> = None;
    let mut breakdown = LossBreakdown::default();
    for t in &terms {
        let w = t.weighted(weights)?;
        total = Some(match total {
            Some(acc) => (acc + w)?,
            None => w,
        });
        let v = t.values()?;
        breakdown.consistency += v.consistency;
        breakdown.adversarial_g += v.adversarial_g;
        breakdown.l1 += v.l1;
        breakdown.ssim_loss += v.ssim_loss;
        breakdown.psnr_loss += v.psnr_loss;
    }
    let mut total = total.expect("four terms");
    if let Some(wsq) = generator_weight_sq {
        total = (total + (wsq * weights.lambda_wd)?)?;
        breakdown.weight_decay = crate::losses::scalar(wsq)?;
    }
    breakdown.total = crate::losses::scalar(&total)?;
    breakdown.check_finite()?;
    Ok((total, breakdown))
}

/// Per-output unweighted terms, in discriminator order.
pub fn multiscale_terms(
    outputs: &FusionOutputs,
    haze: &Pyramid<Tensor>,
    clear: &Pyramid<Tensor>,
    discriminators: &[Discriminator],
    weights: &LossWeights,
) -> Result<Vec<GeneratorTerms>> {
    if discriminators.len() != SCALES + 1 {
        return Err(Error::InvalidArgument(format!(
            "multi-scale training needs {} discriminators, got {}",
            SCALES + 1,
            discriminators.len()
        )));
    }
    let mut terms = Vec::with_capacity(SCALES + 1);
    for k in 0..SCALES {
        let o = &outputs.scales[k];
        let d_fake = discriminators[k].discriminate(&haze.levels[k], &o.dehazed)?;
        terms.push(GeneratorTerms::compute(
            &haze.levels[k],
            &clear.levels[k],
            &o.dehazed,
            &o.i_r,
            &o.j_g,
            &d_fake,
            weights.thresh,
        )?);
    }
    let d_fake = discriminators[SCALES].discriminate(&haze.levels[0], &outputs.hf_fusion)?;
    terms.push(GeneratorTerms::compute(
        &haze.levels[0],
        &clear.levels[0],
        &outputs.hf_fusion,
        &outputs.scales[0].i_r,
        &outputs.j_g_fusion,
        &d_fake,
        weights.thresh,
    )?);
    Ok(terms)
}

/// Four independent discriminators named `{prefix}{1..4}`.
pub fn build_discriminators(spec: &DiscriminatorSpec, store: &mut ParamStore, prefix: &str) -> Result<Vec<Discriminator>> {
    (1..=SCALES + 1)
        .map(|k| Discriminator::new(spec, store, &format!("{prefix}{k}")))
        .collect()
}
