//! Atmospheric scattering model: haze synthesis, its inversion, and the log-domain
//! residual (haze map) that the generator is built around.
//!
//! All functions here are pure; synthesis works on the unit scale `[0, 1]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Domain, Image, Plane, CHANNELS};

/// Smallest transmission accepted by [`invert_scattering`].
pub const T_MIN: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq)]
pub struct TransmissionMap(Plane);

impl TransmissionMap {
    pub fn new(plane: Plane) -> Result<Self> {
        if let Some((i, &v)) = plane
            .data()
            .iter()
            .enumerate()
            .find(|(_, &v)| !(v > 0.0 && v <= 1.0))
        {
            return Err(Error::InvalidArgument(format!(
                "transmission must lie in (0, 1], got {v} at pixel {i}"
            )));
        }
        Ok(Self(plane))
    }

    pub fn uniform(height: usize, width: usize, t: f64) -> Result<Self> {
        Self::new(Plane::filled(height, width, t)?)
    }

    pub fn plane(&self) -> &Plane {
        &self.0
    }

    pub fn dims(&self) -> (usize, usize) {
        self.0.dims()
    }

    pub fn values(&self) -> &[f64] {
        self.0.data()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap(Plane);

impl DepthMap {
    pub fn new(plane: Plane) -> Result<Self> {
        if let Some(&v) = plane.data().iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "depth must be finite and nonnegative, got {v}"
            )));
        }
        Ok(Self(plane))
    }

    pub fn uniform(height: usize, width: usize, d: f64) -> Result<Self> {
        Self::new(Plane::filled(height, width, d)?)
    }

    pub fn dims(&self) -> (usize, usize) {
        self.0.dims()
    }

    pub fn values(&self) -> &[f64] {
        self.0.data()
    }
}

/// Global atmospheric light (per channel, unit scale) and scattering coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScatteringParams {
    pub alpha: [f64; CHANNELS],
    pub beta: f64,
}

impl ScatteringParams {
    pub fn gray(alpha: f64, beta: f64) -> Self {
        Self {
            alpha: [alpha; CHANNELS],
            beta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha.iter().any(|&a| !(a > 0.0 && a <= 1.0)) {
            return Err(Error::InvalidArgument(format!(
                "atmospheric light must lie in (0, 1], got {:?}",
                self.alpha
            )));
        }
        if !self.beta.is_finite() {
            return Err(Error::InvalidArgument("scattering coefficient must be finite".into()));
        }
        Ok(())
    }
}

/// Mean relative estimation errors of the transmission and of the atmospheric light.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimationErrors {
    pub delta_t: f64,
    pub delta_alpha: f64,
}

/// Log-domain residual `I^r - J^g`, same spatial size as the haze image.
#[derive(Debug, Clone, PartialEq)]
pub struct HazeMap(Image);

impl HazeMap {
    pub fn image(&self) -> &Image {
        &self.0
    }

    pub fn into_image(self) -> Image {
        self.0
    }
}

fn check_map_shape(image: &Image, map: (usize, usize), op: &'static str) -> Result<()> {
    if image.dims() != map {
        return Err(Error::shape(
            op,
            format!("{}x{}", image.height(), image.width()),
            format!("{}x{}", map.0, map.1),
        ));
    }
    Ok(())
}

/// `I(x) = J(x) t(x) + alpha (1 - t(x))`.
pub fn apply_scattering(clear: &Image, t: &TransmissionMap, params: &ScatteringParams) -> Result<Image> {
    clear.expect_domain(Domain::Unit)?;
    check_map_shape(clear, t.dims(), "apply_scattering")?;
    params.validate()?;
    let n = clear.plane_len();
    let tv = t.values();
    let data = clear
        .data()
        .iter()
        .enumerate()
        .map(|(i, &j)| {
            let (c, p) = (i / n, i % n);
            j * tv[p] + params.alpha[c] * (1.0 - tv[p])
        })
        .collect();
    Image::new(clear.height(), clear.width(), Domain::Unit, data)
}

/// `J(x) = I(x) / t(x) + alpha (1 - 1 / t(x))`.
///
/// The result is tagged [`Domain::Feature`]: with an inexact transmission the
/// recovered radiance can leave `[0, 1]`.
pub fn invert_scattering(haze: &Image, t: &TransmissionMap, params: &ScatteringParams) -> Result<Image> {
    check_map_shape(haze, t.dims(), "invert_scattering")?;
    params.validate()?;
    if let Some((index, &value)) = t.values().iter().enumerate().find(|(_, &v)| v < T_MIN) {
        return Err(Error::TransmissionBelowFloor {
            value,
            floor: T_MIN,
            index,
        });
    }
    let n = haze.plane_len();
    let tv = t.values();
    let data = haze
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let (c, p) = (i / n, i % n);
            v / tv[p] + params.alpha[c] * (1.0 - 1.0 / tv[p])
        })
        .collect();
    Image::new(haze.height(), haze.width(), Domain::Feature, data)
}

/// `t(x) = exp(-beta d(x))`.
pub fn transmission_from_depth(d: &DepthMap, beta: f64) -> Result<TransmissionMap> {
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "scattering coefficient must be finite and nonnegative, got {beta}"
        )));
    }
    let (h, w) = d.dims();
    // exp underflows to 0 for very large optical depths; keep the map in (0, 1].
    let data = d
        .values()
        .iter()
        .map(|&v| (-beta * v).exp().max(f64::MIN_POSITIVE))
        .collect();
    TransmissionMap::new(Plane::new(h, w, data)?)
}

/// Total relative error of a two-parameter recovery: `d1 + d2 + d1 d2`.
pub fn accumulate_error(e: EstimationErrors) -> Result<f64> {
    let EstimationErrors { delta_t, delta_alpha } = e;
    for (name, v) in [("delta_t", delta_t), ("delta_alpha", delta_alpha)] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "{name} must be finite and nonnegative, got {v}"
            )));
        }
    }
    // Fused multiply-add: a single rounding of the exact value.
    Ok(delta_t.mul_add(delta_alpha, delta_t + delta_alpha))
}

/// `M(x) = I^r(x) - J^g(x)`.
pub fn haze_map(i_r: &Image, j_g: &Image) -> Result<HazeMap> {
    i_r.check_same_shape(j_g, "haze_map")?;
    let data = i_r
        .data()
        .iter()
        .zip(j_g.data())
        .map(|(a, b)| a - b)
        .collect();
    Ok(HazeMap(Image::new(i_r.height(), i_r.width(), Domain::Feature, data)?))
}

/// Depth used when a clear image comes without one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticDepth {
    /// Depth at the top row.
    pub base: f64,
    /// Extra depth added linearly from the bottom row (0) to the top row (`ramp`).
    /// Zero gives a constant depth field.
    #[serde(default)]
    pub ramp: f64,
}

impl Default for SyntheticDepth {
    fn default() -> Self {
        Self { base: 1.0, ramp: 0.0 }
    }
}

impl SyntheticDepth {
    pub fn depth_map(&self, height: usize, width: usize) -> Result<DepthMap> {
        let denom = (height.max(2) - 1) as f64;
        DepthMap::new(Plane::from_fn(height, width, |y, _| {
            // Top of the frame is farther away.
            self.base + self.ramp * (height - 1 - y) as f64 / denom
        })?)
    }
}

pub enum DepthSource<'a> {
    Map(&'a DepthMap),
    Synthetic(SyntheticDepth),
}

/// Builds a `(haze, clear)` training pair from a clear unit-scale image.
pub fn synthesize_pair(
    clear: &Image,
    params: &ScatteringParams,
    depth: DepthSource<'_>,
) -> Result<(Image, Image)> {
    let owned;
    let depth = match depth {
        DepthSource::Map(d) => d,
        DepthSource::Synthetic(s) => {
            owned = s.depth_map(clear.height(), clear.width())?;
            &owned
        }
    };
    let t = transmission_from_depth(depth, params.beta)?;
    let haze = apply_scattering(clear, &t, params)?;
    Ok((haze, clear.clone()))
}

/// Per-image scattering parameter sampler.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HazeSampler {
    pub alpha_range: (f64, f64),
    pub beta_range: (f64, f64),
    #[serde(default)]
    pub depth: SyntheticDepth,
}

impl Default for HazeSampler {
    fn default() -> Self {
        Self {
            alpha_range: (0.7, 1.0),
            beta_range: (0.5, 1.5),
            depth: SyntheticDepth::default(),
        }
    }
}

impl HazeSampler {
    /// Parameters for the `index`-th image of a run seeded with `seed`.
    pub fn sample(&self, seed: u64, index: u64) -> Result<ScatteringParams> {
        let (a0, a1) = self.alpha_range;
        let (b0, b1) = self.beta_range;
        if !(a0 > 0.0 && a0 <= a1 && a1 <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "alpha range must satisfy 0 < lo <= hi <= 1, got {:?}",
                self.alpha_range
            )));
        }
        if !(b0 >= 0.0 && b0 <= b1 && b1.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "beta range must satisfy 0 <= lo <= hi, got {:?}",
                self.beta_range
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index);
        let alpha = if a0 == a1 { a0 } else { rng.random_range(a0..=a1) };
        let beta = if b0 == b1 { b0 } else { rng.random_range(b0..=b1) };
        Ok(ScatteringParams::gray(alpha, beta))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit(h: usize, w: usize, v: f64) -> Image {
        Image::filled(h, w, Domain::Unit, v).unwrap()
    }

    #[test]
    fn full_transmission_is_identity() {
        let clear = Image::from_fn(4, 5, Domain::Unit, |c, y, x| (c + y * 5 + x) as f64 / 40.0).unwrap();
        let t = TransmissionMap::uniform(4, 5, 1.0).unwrap();
        let p = ScatteringParams::gray(0.8, 1.0);
        let haze = apply_scattering(&clear, &t, &p).unwrap();
        assert_eq!(haze.data(), clear.data());
        let back = invert_scattering(&haze, &t, &p).unwrap();
        assert_eq!(back.data(), clear.data());
    }

    #[test]
    fn scattering_arithmetic() {
        let t = TransmissionMap::uniform(1, 1, 0.5).unwrap();
        let p = ScatteringParams::gray(1.0, 1.0);
        let haze = apply_scattering(&unit(1, 1, 0.2), &t, &p).unwrap();
        assert!((haze.get(0, 0, 0) - 0.6).abs() < 1e-15);
        let h = unit(1, 1, 0.6);
        let j = invert_scattering(&h, &t, &p).unwrap();
        assert!((j.get(0, 0, 0) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn shape_and_range_errors() {
        let t = TransmissionMap::uniform(2, 2, 0.5).unwrap();
        let p = ScatteringParams::gray(1.0, 1.0);
        assert!(matches!(
            apply_scattering(&unit(3, 2, 0.1), &t, &p),
            Err(Error::ShapeMismatch { .. })
        ));
        assert!(TransmissionMap::uniform(2, 2, 0.0).is_err());
        assert!(TransmissionMap::uniform(2, 2, 1.5).is_err());
        let low = TransmissionMap::uniform(2, 2, 0.005).unwrap();
        match invert_scattering(&unit(2, 2, 0.5), &low, &p) {
            Err(Error::TransmissionBelowFloor { floor, .. }) => assert_eq!(floor, T_MIN),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn transmission_examples() {
        let d = DepthMap::uniform(2, 3, 7.0).unwrap();
        let t = transmission_from_depth(&d, 0.0).unwrap();
        assert!(t.values().iter().all(|&v| v == 1.0));
        let d = DepthMap::uniform(1, 1, 2f64.ln()).unwrap();
        let t = transmission_from_depth(&d, 1.0).unwrap();
        assert!((t.values()[0] - 0.5).abs() < 1e-15);
        assert!(transmission_from_depth(&d, -0.1).is_err());
        // Huge optical depth stays strictly positive.
        let d = DepthMap::uniform(1, 1, 1e6).unwrap();
        assert!(transmission_from_depth(&d, 10.0).unwrap().values()[0] > 0.0);
    }

    #[test]
    fn error_accumulation() {
        let acc = |a, b| {
            accumulate_error(EstimationErrors {
                delta_t: a,
                delta_alpha: b,
            })
        };
        assert_eq!(acc(0.0, 0.0).unwrap(), 0.0);
        // 0.1 is not a binary fraction; the result is within one ulp of 0.21.
        assert!((acc(0.1, 0.1).unwrap() - 0.21).abs() <= f64::EPSILON * 0.21);
        assert_eq!(acc(0.5, 0.0).unwrap(), 0.5);
        assert!(acc(-0.1, 0.0).is_err());
    }

    #[test]
    fn haze_map_examples() {
        let a = Image::filled(2, 2, Domain::Feature, 0.7).unwrap();
        let b = Image::filled(2, 2, Domain::Feature, 0.2).unwrap();
        let m = haze_map(&a, &b).unwrap();
        assert!(m.image().data().iter().all(|&v| (v - 0.5).abs() < 1e-15));
        assert!(haze_map(&a, &a).unwrap().image().data().iter().all(|&v| v == 0.0));
        let c = Image::filled(2, 3, Domain::Feature, 0.2).unwrap();
        assert!(haze_map(&a, &c).is_err());
    }

    #[test]
    fn synthesis_examples() {
        let clear = Image::from_fn(3, 4, Domain::Unit, |c, y, x| ((c * 7 + y * 3 + x) % 11) as f64 / 10.0).unwrap();
        let (haze, c2) = synthesize_pair(
            &clear,
            &ScatteringParams::gray(0.9, 0.0),
            DepthSource::Synthetic(SyntheticDepth { base: 1.0, ramp: 2.0 }),
        )
        .unwrap();
        assert_eq!(haze, clear);
        assert_eq!(c2, clear);

        let depth = DepthMap::uniform(3, 4, 2f64.ln()).unwrap();
        let (haze, _) = synthesize_pair(&clear, &ScatteringParams::gray(1.0, 1.0), DepthSource::Map(&depth)).unwrap();
        for (h, c) in haze.data().iter().zip(clear.data()) {
            assert!((h - (0.5 * c + 0.5)).abs() < 1e-12);
        }
    }

    #[test]
    fn ramp_depth_is_farther_at_top() {
        let d = SyntheticDepth { base: 0.5, ramp: 1.0 }.depth_map(5, 2).unwrap();
        assert!((d.values()[0] - 1.5).abs() < 1e-15);
        assert!((d.values()[9] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn sampler_is_seeded_and_in_range() {
        let s = HazeSampler::default();
        let a = s.sample(7, 3).unwrap();
        assert_eq!(a, s.sample(7, 3).unwrap());
        assert_ne!(a, s.sample(7, 4).unwrap());
        for i in 0..50 {
            let p = s.sample(1, i).unwrap();
            assert!(p.alpha[0] >= 0.7 && p.alpha[0] <= 1.0);
            assert!(p.beta >= 0.5 && p.beta <= 1.5);
        }
    }

    proptest! {
        #[test]
        fn round_trip_recovers_clear(
            vals in proptest::collection::vec(0.0f64..=1.0, 3 * 12),
            ts in proptest::collection::vec(0.1f64..=1.0, 12),
            alpha in 0.05f64..=1.0,
        ) {
            let clear = Image::new(3, 4, Domain::Unit, vals).unwrap();
            let t = TransmissionMap::new(Plane::new(3, 4, ts).unwrap()).unwrap();
            let p = ScatteringParams::gray(alpha, 1.0);
            let back = invert_scattering(&apply_scattering(&clear, &t, &p).unwrap(), &t, &p).unwrap();
            for (a, b) in back.data().iter().zip(clear.data()) {
                prop_assert!((a - b).abs() < 1e-6);
            }
        }

        #[test]
        fn transmission_monotone_in_depth(
            d1 in proptest::collection::vec(0.0f64..10.0, 6),
            extra in proptest::collection::vec(0.0f64..10.0, 6),
            beta in 0.0f64..3.0,
        ) {
            let d2: Vec<f64> = d1.iter().zip(&extra).map(|(a, b)| a + b).collect();
            let t1 = transmission_from_depth(&DepthMap::new(Plane::new(2, 3, d1).unwrap()).unwrap(), beta).unwrap();
            let t2 = transmission_from_depth(&DepthMap::new(Plane::new(2, 3, d2).unwrap()).unwrap(), beta).unwrap();
            for (a, b) in t1.values().iter().zip(t2.values()) {
                prop_assert!(a >= b);
                prop_assert!(*b > 0.0 && *a <= 1.0);
            }
        }

        #[test]
        fn transmission_decreasing_in_beta(d in 0.01f64..10.0, b1 in 0.0f64..2.0, db in 0.01f64..2.0) {
            let depth = DepthMap::uniform(1, 1, d).unwrap();
            let t1 = transmission_from_depth(&depth, b1).unwrap().values()[0];
            let t2 = transmission_from_depth(&depth, b1 + db).unwrap().values()[0];
            prop_assert!(t2 < t1);
        }

        #[test]
        fn accumulate_error_symmetric_and_dominating(a in 0.0f64..5.0, b in 0.0f64..5.0) {
            let ab = accumulate_error(EstimationErrors { delta_t: a, delta_alpha: b }).unwrap();
            let ba = accumulate_error(EstimationErrors { delta_t: b, delta_alpha: a }).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!(ab >= a.max(b));
        }

        #[test]
        fn haze_map_is_linear(
            i in proptest::collection::vec(-3.0f64..3.0, 12),
            j in proptest::collection::vec(-3.0f64..3.0, 12),
            a in -4.0f64..4.0,
        ) {
            let img = |v: &[f64], s: f64| Image::new(2, 2, Domain::Feature, v.iter().map(|x| x * s).collect()).unwrap();
            let m = haze_map(&img(&i, 1.0), &img(&j, 1.0)).unwrap();
            let ms = haze_map(&img(&i, a), &img(&j, a)).unwrap();
            for (x, y) in m.image().data().iter().zip(ms.image().data()) {
                prop_assert!((a * x - y).abs() < 1e-12);
            }
        }
    }
}
