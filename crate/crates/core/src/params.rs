//! Named, trainable parameter storage.

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Standard deviation of the Gaussian kernel initializer.
pub const INIT_STD: f64 = 0.02;

/// FNV-1a, used to give every parameter its own initialization stream.
pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Ordered map of named variables.
///
/// Layers keep clones of the [`Var`]s they create; `Var` shares its storage, so
/// optimizer updates applied through the store are seen by the layers.
#[derive(Clone)]
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    dtype: DType,
    device: Device,
    seed: u64,
}

impl std::fmt::Debug for ParamStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ParamStore")
            .field("dtype", &self.dtype)
            .field("tensors", &self.vars.len())
            .field("elements", &self.num_elements())
            .finish()
    }
}

impl ParamStore {
    pub fn new(dtype: DType, device: Device, seed: u64) -> Self {
        Self {
            vars: BTreeMap::new(),
            dtype,
            device,
            seed,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    fn insert(&mut self, name: &str, t: Tensor) -> Result<Var> {
        if self.vars.contains_key(name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter name {name}")));
        }
        let v = Var::from_tensor(&t.to_dtype(self.dtype)?)?;
        self.vars.insert(name.to_string(), v.clone());
        Ok(v)
    }

    pub fn normal(&mut self, name: &str, shape: &[usize], std: f64) -> Result<Var> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ fnv1a(name.as_bytes()));
        let dist = Normal::new(0.0, std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| dist.sample(&mut rng)).collect();
        let t = Tensor::from_vec(data, shape, &self.device)?;
        self.insert(name, t)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> Result<Var> {
        let t = Tensor::full(value, shape, &self.device)?;
        self.insert(name, t)
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    /// Overwrites a parameter's value, keeping its shape and the store's dtype.
    pub fn set(&self, name: &str, value: &Tensor) -> Result<()> {
        let var = self
            .vars
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter {name}")))?;
        if var.dims() != value.dims() {
            return Err(Error::shape("ParamStore::set", format!("{:?}", var.dims()), format!("{:?}", value.dims())));
        }
        var.set(&value.to_dtype(self.dtype)?)?;
        Ok(())
    }

    /// Detached copy of every parameter, in name order.
    pub fn snapshot(&self) -> Result<Vec<(String, Tensor)>> {
        self.vars
            .iter()
            .map(|(k, v)| Ok((k.clone(), v.as_detached_tensor().copy()?)))
            .collect()
    }

    /// Sum of squares of the parameters whose name ends in `.weight`.
    pub fn weight_sq_norm(&self) -> Result<Tensor> {
        let mut acc: Option<Tensor> = None;
        for (name, v) in &self.vars {
            if name.ends_with(".weight") {
                let s = v.as_tensor().sqr()?.sum_all()?;
                acc = Some(match acc {
                    Some(a) => (a + s)?,
                    None => s,
                });
            }
        }
        match acc {
            Some(a) => Ok(a),
            None => Ok(Tensor::zeros((), self.dtype, &self.device)?),
        }
    }
}
