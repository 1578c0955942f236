//! Planar three-channel rasters and single-channel maps.
//!
//! Pixels are stored channel-major (`c * h * w + y * w + x`), which is also the
//! memory order of a `(1, 3, h, w)` tensor, so conversion to and from the network
//! representation is a plain copy.

use candle_core::{DType, Device, Tensor};

use crate::error::{Error, Result};

pub const CHANNELS: usize = 3;

/// Value domain an [`Image`] claims to live in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Domain {
    /// `[0, 1]`, used for haze synthesis.
    Unit,
    /// `[-1, 1]`, the network domain.
    UnitSigned,
    /// `[0, 255]`, files and metrics.
    ByteScale,
    /// Any finite value (log-domain feature maps, haze maps).
    Feature,
}

impl Domain {
    pub fn range(self) -> (f64, f64) {
        match self {
            Domain::Unit => (0.0, 1.0),
            Domain::UnitSigned => (-1.0, 1.0),
            Domain::ByteScale => (0.0, 255.0),
            Domain::Feature => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    domain: Domain,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, domain: Domain, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "image dimensions must be positive, got {height}x{width}"
            )));
        }
        let expected = CHANNELS * height * width;
        if data.len() != expected {
            return Err(Error::shape("Image::new", expected, data.len()));
        }
        let (lo, hi) = domain.range();
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("image pixel {i}")));
        }
        // A little slack absorbs rounding in affine domain conversions.
        let tol = 1e-9 * (hi - lo).min(1e9);
        if let Some(v) = data.iter().find(|&&v| v < lo - tol || v > hi + tol) {
            return Err(Error::InvalidArgument(format!(
                "pixel value {v} outside {domain:?} range [{lo}, {hi}]"
            )));
        }
        Ok(Self {
            height,
            width,
            domain,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, domain: Domain, value: f64) -> Result<Self> {
        Self::new(height, width, domain, vec![value; CHANNELS * height * width])
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        domain: Domain,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(CHANNELS * height * width);
        for c in 0..CHANNELS {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self::new(height, width, domain, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub(crate) fn check_same_shape(&self, other: &Image, op: &'static str) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::shape(
                op,
                format!("{}x{}", self.height, self.width),
                format!("{}x{}", other.height, other.width),
            ));
        }
        Ok(())
    }

    /// Re-tags the image after an elementwise affine map.
    pub fn map(&self, domain: Domain, f: impl Fn(f64) -> f64) -> Result<Image> {
        Self::new(
            self.height,
            self.width,
            domain,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    /// `[0,1] -> [-1,1]`.
    pub fn unit_to_signed(&self) -> Result<Image> {
        self.expect_domain(Domain::Unit)?;
        self.map(Domain::UnitSigned, |v| 2.0 * v - 1.0)
    }

    /// `[-1,1] -> [0,1]`.
    pub fn signed_to_unit(&self) -> Result<Image> {
        self.expect_domain(Domain::UnitSigned)?;
        self.map(Domain::Unit, |v| ((v + 1.0) * 0.5).clamp(0.0, 1.0))
    }

    /// Exact byte-scale values (no rounding), `v -> (v + 1) * 127.5`.
    pub fn signed_to_byte_scale(&self) -> Result<Image> {
        self.expect_domain(Domain::UnitSigned)?;
        self.map(Domain::ByteScale, |v| ((v + 1.0) * 127.5).clamp(0.0, 255.0))
    }

    pub fn expect_domain(&self, domain: Domain) -> Result<()> {
        if self.domain != domain {
            return Err(Error::InvalidArgument(format!(
                "expected a {domain:?} image, got {:?}",
                self.domain
            )));
        }
        Ok(())
    }

    /// `(1, 3, h, w)` tensor.
    pub fn to_tensor(&self, dtype: DType, device: &Device) -> Result<Tensor> {
        let t = Tensor::from_slice(&self.data, (1, CHANNELS, self.height, self.width), device)?;
        Ok(t.to_dtype(dtype)?)
    }

    /// Inverse of [`Image::to_tensor`]; values are validated against `domain`.
    pub fn from_tensor(t: &Tensor, domain: Domain) -> Result<Image> {
        let (b, c, h, w) = t.dims4()?;
        if b != 1 || c != CHANNELS {
            return Err(Error::shape("Image::from_tensor", "(1, 3, h, w)", format!("{:?}", t.dims())));
        }
        let data = t.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
        Image::new(h, w, domain, data)
    }
}

/// Single-channel real map (transmission, depth).
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Plane {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "map dimensions must be positive, got {height}x{width}"
            )));
        }
        if data.len() != height * width {
            return Err(Error::shape("Plane::new", height * width, data.len()));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self::new(height, width, data)
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}
