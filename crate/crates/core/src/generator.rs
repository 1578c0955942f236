//! UR-Net-K generator: a strided-conv encoder and a decoder made of K U-type
//! residual units, producing an output of exactly the input size.
//!
//! Encoder level `i` (conv`i`, `i = 1..=K+1`) has spatial size
//! `ceil(h / 2^i) x ceil(w / 2^i)`. Unit `k` (`k = K..=1`) takes the decoder
//! state at level `k + 1` and the encoder skip at level `k`:
//!
//! 1. 5x5 stride-2 deconvolution sized to the skip's exact `(h_k, w_k)`
//! 2. optional dropout (the noise input)
//! 3. channel concatenation with the skip
//! 4. 3x3 stride-1 convolution back to the skip's channel count
//! 5. `skip - conv_output` (left out at unit 1 for the star variant)
//!
//! A final 5x5 stride-2 deconvolution maps level 1 to a 3-channel, input-sized
//! log-domain map `J^g`; the image is `tanh(J^g)`. A separate 3x3 convolution on
//! the input provides the matching `I^r` tap, and the haze map is `I^r - J^g`.

use std::collections::BTreeSet;

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{leaky_relu, Conv2d, NoiseSource, Norm, SizedDeconv};
use crate::params::ParamStore;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    /// Number of UR-Net units; the encoder has `depth + 1` strided convolutions.
    pub depth: usize,
    /// Drop the subtraction in the last (outermost) unit.
    pub star: bool,
    /// Channel widths of conv1..conv`depth+1`.
    pub encoder_channels: Vec<usize>,
    /// Encoder levels whose upsampling deconvolution is followed by dropout.
    pub dropout_sites: BTreeSet<usize>,
    pub leak: f64,
    pub dropout_rate: f64,
}

impl GeneratorSpec {
    /// UR-Net-7 with the standard 64..512 widths.
    pub fn ur_net_7() -> Self {
        Self::canonical(7, false)
    }

    /// Canonical widths `64, 128, 256, 512, 512, ...` and dropout after the
    /// deconvolutions fed by the three innermost encoder levels.
    pub fn canonical(depth: usize, star: bool) -> Self {
        let encoder_channels = (0..=depth).map(|i| (64usize << i.min(3)).min(512)).collect();
        let dropout_sites = (depth.saturating_sub(1).max(2)..=depth + 1).collect();
        Self {
            depth,
            star,
            encoder_channels,
            dropout_sites,
            leak: crate::nn::LEAK,
            dropout_rate: 0.5,
        }
    }

    /// Divides every width by `factor` (minimum 1).
    pub fn scaled_widths(mut self, factor: usize) -> Self {
        for c in &mut self.encoder_channels {
            *c = (*c / factor.max(1)).max(1);
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::InvalidSpec("depth must be at least 1".into()));
        }
        if self.encoder_channels.len() != self.depth + 1 {
            return Err(Error::InvalidSpec(format!(
                "depth {} needs {} encoder widths, got {}",
                self.depth,
                self.depth + 1,
                self.encoder_channels.len()
            )));
        }
        if self.encoder_channels.contains(&0) {
            return Err(Error::InvalidSpec("encoder widths must be positive".into()));
        }
        if let Some(s) = self
            .dropout_sites
            .iter()
            .find(|&&s| s < 2 || s > self.depth + 1)
        {
            return Err(Error::InvalidSpec(format!(
                "dropout site {s} is not an encoder level feeding a unit (2..={})",
                self.depth + 1
            )));
        }
        if !(0.0..=1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidSpec(format!("dropout rate {} outside [0, 1]", self.dropout_rate)));
        }
        if !(self.leak.is_finite() && self.leak >= 0.0 && self.leak <= 1.0) {
            return Err(Error::InvalidSpec(format!("leak {} outside [0, 1]", self.leak)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub level: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

/// Spatial size of encoder level `level` for an `input_h x input_w` input.
pub fn layer_size(input_h: usize, input_w: usize, level: usize) -> (usize, usize) {
    let (mut h, mut w) = (input_h, input_w);
    for _ in 0..level {
        h = h.div_ceil(2);
        w = w.div_ceil(2);
    }
    (h, w)
}

/// Shapes of the input (level 0) and every encoder level.
pub fn encoder_shapes(spec: &GeneratorSpec, input_h: usize, input_w: usize) -> Vec<LayerShape> {
    (0..=spec.depth + 1)
        .map(|level| {
            let (height, width) = layer_size(input_h, input_w, level);
            let channels = if level == 0 { 3 } else { spec.encoder_channels[level - 1] };
            LayerShape {
                level,
                height,
                width,
                channels,
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
struct EncoderLayer {
    conv: Conv2d,
    norm: Norm,
}

/// One U-type residual unit.
#[derive(Debug, Clone)]
pub struct UrUnit {
    /// Encoder level of the skip this unit merges into.
    pub level: usize,
    deconv: SizedDeconv,
    deconv_norm: Norm,
    reduce: Conv2d,
    reduce_norm: Norm,
    subtract: bool,
    dropout: Option<f64>,
    leak: f64,
}

impl UrUnit {
    /// `state` lives at level `self.level + 1`, `skip` at `self.level`.
    pub fn forward(&self, state: &Tensor, skip: &Tensor, noise: &NoiseSource) -> Result<Tensor> {
        let (_, _, h, w) = skip.dims4()?;
        let up = self.deconv.forward_to(state, (h, w))?;
        let mut up = leaky_relu(&self.deconv_norm.forward(&up)?, self.leak)?;
        if let Some(rate) = self.dropout {
            up = noise.dropout(&up, rate, (self.level + 1) as u64)?;
        }
        let cat = Tensor::cat(&[&up, skip], 1)?;
        let r = leaky_relu(&self.reduce_norm.forward(&self.reduce.forward(&cat)?)?, self.leak)?;
        if self.subtract {
            Ok((skip - r)?)
        } else {
            Ok(r)
        }
    }

    pub fn subtracts(&self) -> bool {
        self.subtract
    }

    /// Toggles the residual subtraction (diagnostics).
    pub fn set_subtract(&mut self, on: bool) {
        self.subtract = on;
    }

    pub fn reduce_conv(&self) -> &Conv2d {
        &self.reduce
    }
}

/// Everything one forward pass exposes. All tensors are `(1, c, h, w)`.
#[derive(Debug, Clone)]
pub struct GeneratorOutput {
    /// `tanh(J^g)`, in `[-1, 1]`.
    pub dehazed: Tensor,
    pub i_r: Tensor,
    pub j_g: Tensor,
    /// `I^r - J^g`.
    pub haze_map: Tensor,
}

#[derive(Debug, Clone)]
pub struct Generator {
    spec: GeneratorSpec,
    prefix: String,
    tap: Conv2d,
    encoder: Vec<EncoderLayer>,
    /// Innermost first (unit K .. unit 1).
    units: Vec<UrUnit>,
    out: SizedDeconv,
}

impl Generator {
    /// Registers all parameters under `prefix` in `store`.
    pub fn new(spec: &GeneratorSpec, store: &mut ParamStore, prefix: &str) -> Result<Self> {
        spec.validate()?;
        let name = |s: &str| format!("{prefix}.{s}");
        let tap = Conv2d::new(store, &name("tap"), 3, 3, 3, 1, true)?;
        let mut encoder = Vec::with_capacity(spec.depth + 1);
        let mut c_prev = 3;
        for (i, &c) in spec.encoder_channels.iter().enumerate() {
            let n = name(&format!("conv{}", i + 1));
            encoder.push(EncoderLayer {
                conv: Conv2d::new(store, &n, c_prev, c, 5, 2, false)?,
                norm: Norm::new(store, &format!("{n}.norm"), c)?,
            });
            c_prev = c;
        }
        let mut units = Vec::with_capacity(spec.depth);
        for level in (1..=spec.depth).rev() {
            let c_skip = spec.encoder_channels[level - 1];
            let c_state = spec.encoder_channels[level];
            let n = name(&format!("unit{level}"));
            units.push(UrUnit {
                level,
                deconv: SizedDeconv::new(store, &format!("{n}.deconv"), c_state, c_skip, false)?,
                deconv_norm: Norm::new(store, &format!("{n}.deconv.norm"), c_skip)?,
                reduce: Conv2d::new(store, &format!("{n}.reduce"), 2 * c_skip, c_skip, 3, 1, false)?,
                reduce_norm: Norm::new(store, &format!("{n}.reduce.norm"), c_skip)?,
                subtract: !(spec.star && level == 1),
                dropout: spec
                    .dropout_sites
                    .contains(&(level + 1))
                    .then_some(spec.dropout_rate),
                leak: spec.leak,
            });
        }
        let out = SizedDeconv::new(store, &name("out"), spec.encoder_channels[0], 3, true)?;
        Ok(Self {
            spec: spec.clone(),
            prefix: prefix.to_string(),
            tap,
            encoder,
            units,
            out,
        })
    }

    pub fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn units(&self) -> &[UrUnit] {
        &self.units
    }

    pub fn units_mut(&mut self) -> &mut [UrUnit] {
        &mut self.units
    }

    /// Final deconvolution producing `J^g`.
    pub fn output_layer(&self) -> &SizedDeconv {
        &self.out
    }

    /// `haze` is a `(1, 3, h, w)` tensor on the `[-1, 1]` scale; any `h, w >= 1`.
    pub fn forward(&self, haze: &Tensor, noise: &NoiseSource) -> Result<GeneratorOutput> {
        let (b, c, h, w) = haze.dims4()?;
        if b != 1 || c != 3 {
            return Err(Error::shape("Generator::forward", "(1, 3, h, w)", format!("{:?}", haze.dims())));
        }
        let finite = haze.abs()?.max_all()?.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?;
        if !finite.is_finite() {
            return Err(Error::NonFinite("generator input".into()));
        }

        let i_r = self.tap.forward(haze)?;
        let mut skips = Vec::with_capacity(self.encoder.len());
        let mut x = haze.clone();
        for layer in &self.encoder {
            x = leaky_relu(&layer.norm.forward(&layer.conv.forward(&x)?)?, self.spec.leak)?;
            skips.push(x.clone());
        }
        let mut state = x;
        for unit in &self.units {
            state = unit.forward(&state, &skips[unit.level - 1], noise)?;
        }
        let j_g = self.out.forward_to(&state, (h, w))?;
        let dehazed = j_g.tanh()?;
        let haze_map = (&i_r - &j_g)?;
        Ok(GeneratorOutput {
            dehazed,
            i_r,
            j_g,
            haze_map,
        })
    }
}
