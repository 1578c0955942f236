//! Layer primitives shared by the generator and discriminator.

use candle_core::{Tensor, Var, D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::params::{ParamStore, INIT_STD};

pub const LEAK: f64 = 0.2;
const NORM_EPS: f64 = 1e-5;

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    // max(x, s x) for 0 <= s <= 1
    Ok(x.maximum(&(x * slope)?)?)
}

/// Zero-pads odd spatial dims up to even.
///
/// For a 5x5 / stride 2 / pad 2 convolution the extra row or column only ever
/// meets the kernel where implicit zero padding would, so the output is unchanged.
/// Keeping both dims even sidesteps the transposed-convolution shape mismatch in
/// the backward pass when height and width have different parities.
fn pad_to_even(x: &Tensor) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    let mut x = x.clone();
    if h % 2 == 1 {
        x = x.pad_with_zeros(2, 0, 1)?;
    }
    if w % 2 == 1 {
        x = x.pad_with_zeros(3, 0, 1)?;
    }
    Ok(x)
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    weight: Var,
    bias: Option<Var>,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        bias: bool,
    ) -> Result<Self> {
        if kernel % 2 == 0 {
            return Err(Error::InvalidArgument(format!("kernel size must be odd, got {kernel}")));
        }
        if stride != 1 && !(stride == 2 && kernel == 5) {
            return Err(Error::InvalidArgument(format!(
                "unsupported conv geometry kernel {kernel} stride {stride}"
            )));
        }
        let weight = store.normal(&format!("{name}.weight"), &[c_out, c_in, kernel, kernel], INIT_STD)?;
        let bias = if bias {
            Some(store.constant(&format!("{name}.bias"), &[c_out], 0.0)?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            stride,
            padding: kernel / 2,
        })
    }

    pub fn weight(&self) -> &Var {
        &self.weight
    }

    pub fn bias(&self) -> Option<&Var> {
        self.bias.as_ref()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let x = if self.stride == 2 { pad_to_even(x)? } else { x.clone() };
        let y = x.conv2d(self.weight.as_tensor(), self.padding, self.stride, 1, 1)?;
        match &self.bias {
            Some(b) => Ok(y.broadcast_add(&b.as_tensor().reshape((1, (), 1, 1))?)?),
            None => Ok(y),
        }
    }
}

/// 5x5, stride-2 transposed convolution whose output is cut to an exact target size.
///
/// With padding 2 and output padding 1 the raw output is `2 h`; any target in
/// `{2h - 1, 2h}` (the only sizes whose ceil-half is `h`) is reached by cropping
/// at most one trailing row/column.
#[derive(Debug, Clone)]
pub struct SizedDeconv {
    weight: Var,
    bias: Option<Var>,
}

impl SizedDeconv {
    pub fn new(store: &mut ParamStore, name: &str, c_in: usize, c_out: usize, bias: bool) -> Result<Self> {
        let weight = store.normal(&format!("{name}.weight"), &[c_in, c_out, 5, 5], INIT_STD)?;
        let bias = if bias {
            Some(store.constant(&format!("{name}.bias"), &[c_out], 0.0)?)
        } else {
            None
        };
        Ok(Self { weight, bias })
    }

    pub fn weight(&self) -> &Var {
        &self.weight
    }

    pub fn bias(&self) -> Option<&Var> {
        self.bias.as_ref()
    }

    pub fn forward_to(&self, x: &Tensor, target: (usize, usize)) -> Result<Tensor> {
        let (_, _, h, w) = x.dims4()?;
        let (th, tw) = target;
        if th.div_ceil(2) != h || tw.div_ceil(2) != w {
            return Err(Error::shape(
                "SizedDeconv::forward_to",
                format!("input {}x{} for target {th}x{tw}", th.div_ceil(2), tw.div_ceil(2)),
                format!("{h}x{w}"),
            ));
        }
        let y = x.conv_transpose2d(self.weight.as_tensor(), 2, 1, 2, 1)?;
        let y = if 2 * h != th { y.narrow(2, 0, th)? } else { y };
        let y = if 2 * w != tw { y.narrow(3, 0, tw)? } else { y };
        match &self.bias {
            Some(b) => Ok(y.broadcast_add(&b.as_tensor().reshape((1, (), 1, 1))?)?),
            None => Ok(y),
        }
    }
}

/// Per-feature-map normalization with a learned affine map.
///
/// With batch size 1 this is what batch statistics reduce to. A 1x1 map has no
/// spatial statistics and only receives the affine map.
#[derive(Debug, Clone)]
pub struct Norm {
    gamma: Var,
    beta: Var,
}

impl Norm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.constant(&format!("{name}.gamma"), &[channels], 1.0)?,
            beta: store.constant(&format!("{name}.beta"), &[channels], 0.0)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c, h, w) = x.dims4()?;
        let gamma = self.gamma.as_tensor().reshape((1, c, 1, 1))?;
        let beta = self.beta.as_tensor().reshape((1, c, 1, 1))?;
        let x = if h * w > 1 {
            let flat = x.reshape((b, c, h * w))?;
            let mean = flat.mean_keepdim(D::Minus1)?;
            let centered = flat.broadcast_sub(&mean)?;
            let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
            centered
                .broadcast_div(&(var + NORM_EPS)?.sqrt()?)?
                .reshape((b, c, h, w))?
        } else {
            x.clone()
        };
        Ok(x.broadcast_mul(&gamma)?.broadcast_add(&beta)?)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    weight: Var,
    bias: Var,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, c_in: usize, c_out: usize) -> Result<Self> {
        Ok(Self {
            weight: store.normal(&format!("{name}.weight"), &[c_out, c_in], INIT_STD)?,
            bias: store.constant(&format!("{name}.bias"), &[c_out], 0.0)?,
        })
    }

    pub fn weight(&self) -> &Var {
        &self.weight
    }

    pub fn bias(&self) -> &Var {
        &self.bias
    }

    /// `(b, c_in) -> (b, c_out)`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.matmul(&self.weight.as_tensor().t()?)?;
        Ok(y.broadcast_add(self.bias.as_tensor())?)
    }
}

/// Seeded randomness for the dropout noise.
///
/// Each dropout site draws from its own ChaCha stream keyed by `(seed, site)`,
/// so a forward pass is a pure function of the seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseSource {
    pub seed: u64,
}

impl NoiseSource {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    /// Noise for optimization step `step` of a run seeded with `seed`.
    pub fn for_step(seed: u64, step: u64) -> Self {
        Self {
            seed: seed ^ step.wrapping_mul(0x9e37_79b9_7f4a_7c15).rotate_left(17),
        }
    }

    /// Derived source for an independent sub-network (e.g. one pyramid scale).
    pub fn derive(&self, key: u64) -> Self {
        Self {
            seed: self.seed.wrapping_add(key.wrapping_mul(0xd1b5_4a32_d192_ed03)),
        }
    }

    fn mask(&self, site: u64, shape: &[usize], keep: f64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(site);
        let n: usize = shape.iter().product();
        let scale = 1.0 / keep;
        (0..n)
            .map(|_| if rng.random::<f64>() < keep { scale } else { 0.0 })
            .collect()
    }

    /// Inverted dropout: kept activations are scaled by `1 / (1 - rate)`.
    pub fn dropout(&self, x: &Tensor, rate: f64, site: u64) -> Result<Tensor> {
        if rate <= 0.0 {
            return Ok(x.clone());
        }
        if rate >= 1.0 {
            return Ok(x.zeros_like()?);
        }
        let mask = self.mask(site, x.dims(), 1.0 - rate);
        let mask = Tensor::from_vec(mask, x.dims(), x.device())?.to_dtype(x.dtype())?;
        Ok((x * mask)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    fn store() -> ParamStore {
        ParamStore::new(DType::F64, Device::Cpu, 3)
    }

    #[test]
    fn leaky_relu_values() {
        let x = Tensor::new(&[-2.0f64, 0.0, 3.0], &Device::Cpu).unwrap();
        let y = leaky_relu(&x, 0.2).unwrap().to_vec1::<f64>().unwrap();
        assert_eq!(y, vec![-0.4, 0.0, 3.0]);
    }

    #[test]
    fn stride_two_conv_gives_ceil_half() {
        let mut s = store();
        let conv = Conv2d::new(&mut s, "c", 2, 3, 5, 2, false).unwrap();
        for (h, w) in [(7, 8), (8, 7), (1, 1), (2, 5), (9, 9)] {
            let x = Tensor::ones((1, 2, h, w), DType::F64, &Device::Cpu).unwrap();
            let y = conv.forward(&x).unwrap();
            assert_eq!(y.dims(), &[1, 3, h.div_ceil(2), w.div_ceil(2)]);
        }
    }

    #[test]
    fn even_padding_does_not_change_conv_output() {
        let mut s = store();
        let conv = Conv2d::new(&mut s, "c", 1, 1, 5, 2, false).unwrap();
        let x = Tensor::randn(0f64, 1.0, (1, 1, 7, 9), &Device::Cpu).unwrap();
        let direct = x.conv2d(conv.weight().as_tensor(), 2, 2, 1, 1).unwrap();
        let padded = conv.forward(&x).unwrap();
        let diff = (direct - padded).unwrap().abs().unwrap().max_all().unwrap();
        assert_eq!(diff.to_scalar::<f64>().unwrap(), 0.0);
    }

    #[test]
    fn sized_deconv_hits_every_target() {
        let mut s = store();
        let de = SizedDeconv::new(&mut s, "d", 4, 2, true).unwrap();
        for (th, tw) in [(7usize, 8usize), (8, 7), (1, 1), (2, 1), (367, 541)] {
            let x = Tensor::ones((1, 4, th.div_ceil(2), tw.div_ceil(2)), DType::F64, &Device::Cpu).unwrap();
            let y = de.forward_to(&x, (th, tw)).unwrap();
            assert_eq!(y.dims(), &[1, 2, th, tw]);
        }
        let x = Tensor::ones((1, 4, 3, 3), DType::F64, &Device::Cpu).unwrap();
        assert!(de.forward_to(&x, (8, 6)).is_err());
    }

    #[test]
    fn norm_standardizes_each_map() {
        let mut s = store();
        let n = Norm::new(&mut s, "n", 2).unwrap();
        let x = Tensor::randn(3f64, 2.0, (1, 2, 5, 4), &Device::Cpu).unwrap();
        let y = n.forward(&x).unwrap().reshape((2, 20)).unwrap();
        let mean = y.mean(1).unwrap().to_vec1::<f64>().unwrap();
        let var = y.sqr().unwrap().mean(1).unwrap().to_vec1::<f64>().unwrap();
        for c in 0..2 {
            assert!(mean[c].abs() < 1e-12);
            assert!((var[c] - 1.0).abs() < 1e-3);
        }
        // 1x1 maps pass through the affine part only.
        let x = Tensor::new(&[[[[2.5f64]], [[-1.0]]]], &Device::Cpu).unwrap();
        let y = n.forward(&x).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        assert_eq!(y, vec![2.5, -1.0]);
    }

    #[test]
    fn dropout_is_seeded() {
        let x = Tensor::ones((1, 4, 8, 8), DType::F64, &Device::Cpu).unwrap();
        let a = NoiseSource::new(5).dropout(&x, 0.5, 1).unwrap();
        let b = NoiseSource::new(5).dropout(&x, 0.5, 1).unwrap();
        let c = NoiseSource::new(5).dropout(&x, 0.5, 2).unwrap();
        let va = a.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        assert_eq!(va, b.flatten_all().unwrap().to_vec1::<f64>().unwrap());
        assert_ne!(va, c.flatten_all().unwrap().to_vec1::<f64>().unwrap());
        assert!(va.iter().all(|&v| v == 0.0 || v == 2.0));
        let kept = va.iter().filter(|&&v| v > 0.0).count();
        assert!(kept > 96 && kept < 160, "kept {kept}");
    }
}
