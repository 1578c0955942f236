//! Conditional discriminator that accepts any input size: four convolutions, a
//! spatial pyramid pooling layer and a scalar classifier head.

use candle_core::{Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{leaky_relu, Conv2d, Linear, Norm, LEAK};
use crate::params::ParamStore;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscriminatorSpec {
    pub conv_channels: [usize; 4],
    pub spp_levels: usize,
}

impl Default for DiscriminatorSpec {
    fn default() -> Self {
        Self {
            conv_channels: [64, 128, 256, 512],
            spp_levels: 4,
        }
    }
}

impl DiscriminatorSpec {
    pub fn scaled_widths(mut self, factor: usize) -> Self {
        for c in &mut self.conv_channels {
            *c = (*c / factor.max(1)).max(1);
        }
        self
    }

    /// `C * sum_{n=1..levels} n^2`.
    pub fn head_width(&self) -> usize {
        self.conv_channels[3] * spp_cells(self.spp_levels)
    }

    /// Smallest height/width whose post-convolution map still has one pixel per
    /// pyramid cell at the finest level.
    pub fn min_input_size(&self) -> usize {
        // Three ceil-halvings must leave at least `spp_levels` pixels.
        (self.spp_levels.max(1) - 1) * 8 + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.conv_channels.contains(&0) || self.spp_levels == 0 {
            return Err(Error::InvalidSpec(format!("invalid discriminator spec {self:?}")));
        }
        Ok(())
    }
}

pub fn spp_cells(levels: usize) -> usize {
    (1..=levels).map(|n| n * n).sum()
}

/// `[start, end)` of cell `i` when splitting `len` into `n` bins.
pub fn spp_bin(len: usize, n: usize, i: usize) -> (usize, usize) {
    let start = (i * len) / n;
    let end = ((i + 1) * len).div_ceil(n);
    (start, end)
}

/// Pyramid max pooling of a `(1, C, h, w)` map into a `(1, C * sum n^2)` vector.
///
/// Layout is level-major, then channel, then cell in row-major order.
pub fn spp_pool(features: &Tensor, levels: usize) -> Result<Tensor> {
    let (b, c, h, w) = features.dims4()?;
    if b != 1 {
        return Err(Error::shape("spp_pool", "batch 1", b));
    }
    if h < levels || w < levels {
        return Err(Error::Undersized {
            what: "pyramid pooling needs at least one pixel per cell of the finest level",
            height: h,
            width: w,
            min_height: levels,
            min_width: levels,
        });
    }
    let mut per_level = Vec::with_capacity(levels);
    for n in 1..=levels {
        let mut cells = Vec::with_capacity(n * n);
        for i in 0..n {
            let (y0, y1) = spp_bin(h, n, i);
            let rows = features.narrow(2, y0, y1 - y0)?;
            for j in 0..n {
                let (x0, x1) = spp_bin(w, n, j);
                let cell = rows.narrow(3, x0, x1 - x0)?.contiguous()?;
                cells.push(cell.reshape((c, ()))?.max(D::Minus1)?);
            }
        }
        // (n*n, C) -> (C, n*n) -> flat
        per_level.push(Tensor::stack(&cells, 1)?.flatten_all()?);
    }
    Ok(Tensor::cat(&per_level, 0)?.unsqueeze(0)?)
}

#[derive(Debug, Clone)]
struct DiscLayer {
    conv: Conv2d,
    norm: Norm,
}

#[derive(Debug, Clone)]
pub struct Discriminator {
    spec: DiscriminatorSpec,
    layers: Vec<DiscLayer>,
    head: Linear,
}

impl Discriminator {
    pub fn new(spec: &DiscriminatorSpec, store: &mut ParamStore, prefix: &str) -> Result<Self> {
        spec.validate()?;
        let mut layers = Vec::with_capacity(4);
        let mut c_prev = 6;
        for (i, &c) in spec.conv_channels.iter().enumerate() {
            let stride = if i < 3 { 2 } else { 1 };
            let name = format!("{prefix}.conv{}", i + 1);
            layers.push(DiscLayer {
                conv: Conv2d::new(store, &name, c_prev, c, 5, stride, false)?,
                norm: Norm::new(store, &format!("{name}.norm"), c)?,
            });
            c_prev = c;
        }
        let head = Linear::new(store, &format!("{prefix}.head"), spec.head_width(), 1)?;
        Ok(Self {
            spec: spec.clone(),
            layers,
            head,
        })
    }

    pub fn spec(&self) -> &DiscriminatorSpec {
        &self.spec
    }

    pub fn head(&self) -> &Linear {
        &self.head
    }

    /// Fixed-length pooled features for a stacked 6-channel input.
    pub fn features(&self, stacked: &Tensor) -> Result<Tensor> {
        let (_, c, h, w) = stacked.dims4()?;
        if c != 6 {
            return Err(Error::shape("Discriminator::features", "6 channels", c));
        }
        let min = self.spec.min_input_size();
        if h < min || w < min {
            return Err(Error::Undersized {
                what: "discriminator input",
                height: h,
                width: w,
                min_height: min,
                min_width: min,
            });
        }
        let mut x = stacked.clone();
        for layer in &self.layers {
            x = leaky_relu(&layer.norm.forward(&layer.conv.forward(&x)?)?, LEAK)?;
        }
        spp_pool(&x, self.spec.spp_levels)
    }

    /// Raw classifier output, shape `()`.
    pub fn logit(&self, condition: &Tensor, candidate: &Tensor) -> Result<Tensor> {
        if condition.dims() != candidate.dims() {
            return Err(Error::shape(
                "Discriminator::logit",
                format!("{:?}", condition.dims()),
                format!("{:?}", candidate.dims()),
            ));
        }
        let stacked = Tensor::cat(&[condition, candidate], 1)?;
        Ok(self.head.forward(&self.features(&stacked)?)?.flatten_all()?.squeeze(0)?)
    }

    /// `D(condition, candidate)`: probability that `candidate` is the real clear
    /// image for the haze image `condition`. Shape `()`, value in `(0, 1)`.
    pub fn discriminate(&self, condition: &Tensor, candidate: &Tensor) -> Result<Tensor> {
        sigmoid(&self.logit(condition, candidate)?)
    }
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok((x.neg()?.exp()? + 1.0)?.recip()?)
}
