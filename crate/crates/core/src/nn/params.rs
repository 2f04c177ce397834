//! Named, seeded parameter storage.
//!
//! Every trainable tensor is a [`Var`] registered under a dotted path. The
//! store owns a ChaCha RNG, so two stores built with the same seed and the
//! same construction order hold bit-identical initial values.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex, MutexGuard};

use candle_core::{DType, Device, Shape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use sha2::{Digest, Sha256};

use crate::{Result, TtsError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Const(f64),
    Normal(f64),
    /// Uniform on `[-bound, bound]`.
    Uniform(f64),
}

struct Inner {
    vars: BTreeMap<String, Var>,
    rng: ChaCha8Rng,
}

#[derive(Clone)]
pub struct ParamStore {
    inner: Arc<Mutex<Inner>>,
    prefix: String,
    dtype: DType,
    device: Device,
}

impl std::fmt::Debug for ParamStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ParamStore")
            .field("prefix", &self.prefix)
            .field("dtype", &self.dtype)
            .field("len", &self.lock().vars.len())
            .finish()
    }
}

impl ParamStore {
    pub fn new(seed: u64, dtype: DType) -> Self {
        Self {
            inner: Arc::new(Mutex::new(Inner {
                vars: BTreeMap::new(),
                rng: ChaCha8Rng::seed_from_u64(seed),
            })),
            prefix: String::new(),
            dtype,
            device: Device::Cpu,
        }
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().expect("parameter store poisoned")
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    /// A view whose names are prefixed with `name.`.
    pub fn pp(&self, name: impl AsRef<str>) -> Self {
        let name = name.as_ref();
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        };
        Self {
            inner: self.inner.clone(),
            prefix,
            dtype: self.dtype,
            device: self.device.clone(),
        }
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        }
    }

    /// Creates (or returns the existing) parameter `name`.
    pub fn get(&self, name: &str, shape: impl Into<Shape>, init: Init) -> Result<Tensor> {
        let shape = shape.into();
        let full = self.full_name(name);
        let mut inner = self.lock();
        if let Some(v) = inner.vars.get(&full) {
            if v.shape() != &shape {
                return Err(TtsError::Shape(format!(
                    "parameter {full} exists with shape {:?}, requested {:?}",
                    v.shape(),
                    shape
                )));
            }
            return Ok(v.as_tensor().clone());
        }
        let n = shape.elem_count();
        let values: Vec<f64> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Const(c) => vec![c; n],
            Init::Normal(std) => {
                let d = Normal::new(0.0, std).map_err(|e| TtsError::Config(e.to_string()))?;
                (0..n).map(|_| d.sample(&mut inner.rng)).collect()
            }
            Init::Uniform(bound) => {
                let d = Uniform::new_inclusive(-bound, bound).map_err(|e| TtsError::Config(e.to_string()))?;
                (0..n).map(|_| d.sample(&mut inner.rng)).collect()
            }
        };
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        inner.vars.insert(full, var);
        Ok(out)
    }

    /// All parameters under this view's prefix, ordered by name.
    pub fn vars(&self) -> Vec<(String, Var)> {
        let inner = self.lock();
        inner
            .vars
            .iter()
            .filter(|(k, _)| self.prefix.is_empty() || k.starts_with(&format!("{}.", self.prefix)))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.vars().iter().map(|(_, v)| v.elem_count()).sum()
    }

    /// SHA-256 over names and raw values, for change detection.
    pub fn hash(&self) -> Result<String> {
        let mut h = Sha256::new();
        for (name, var) in self.vars() {
            h.update(name.as_bytes());
            let vals = var.as_tensor().flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
            for v in vals {
                h.update(v.to_le_bytes());
            }
        }
        Ok(hex::encode(h.finalize()))
    }

    pub fn tensors(&self) -> BTreeMap<String, Tensor> {
        self.vars()
            .into_iter()
            .map(|(k, v)| (k, v.as_tensor().detach()))
            .collect()
    }

    /// Overwrites every parameter from `values`. All names and shapes are
    /// checked before anything is written.
    pub fn load(&self, values: &BTreeMap<String, Tensor>) -> Result<()> {
        self.check(values)?;
        for (name, var) in &self.vars() {
            var.set(&values[name].to_dtype(self.dtype)?)?;
        }
        Ok(())
    }

    /// Verifies that `values` holds every parameter with the right shape.
    pub fn check(&self, values: &BTreeMap<String, Tensor>) -> Result<()> {
        for (name, var) in &self.vars() {
            let t = values
                .get(name)
                .ok_or_else(|| TtsError::Checkpoint(format!("missing parameter {name}")))?;
            if t.shape() != var.shape() {
                return Err(TtsError::Checkpoint(format!(
                    "parameter {name}: stored shape {:?}, model expects {:?}",
                    t.shape(),
                    var.shape()
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_values() {
        let a = ParamStore::new(3, DType::F32);
        let b = ParamStore::new(3, DType::F32);
        let ta = a.pp("x").get("w", (4, 5), Init::Normal(1.0)).unwrap();
        let tb = b.pp("x").get("w", (4, 5), Init::Normal(1.0)).unwrap();
        assert_eq!(ta.to_vec2::<f32>().unwrap(), tb.to_vec2::<f32>().unwrap());
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
    }

    #[test]
    fn prefixes_and_reuse() {
        let s = ParamStore::new(0, DType::F32);
        s.pp("a").pp("b").get("w", 3, Init::Zeros).unwrap();
        s.pp("ab").get("w", 2, Init::Zeros).unwrap();
        assert_eq!(s.pp("a").vars().len(), 1);
        assert_eq!(s.vars()[0].0, "a.b.w");
        assert!(s.pp("a").pp("b").get("w", 4, Init::Zeros).is_err());
        assert_eq!(s.num_params(), 5);
    }

    #[test]
    fn load_rejects_missing_names_without_writing() {
        let s = ParamStore::new(0, DType::F32);
        s.get("a", 2, Init::Zeros).unwrap();
        s.get("b", 2, Init::Zeros).unwrap();
        let before = s.hash().unwrap();
        let mut m = BTreeMap::new();
        m.insert("a".to_string(), Tensor::ones(2, DType::F32, &Device::Cpu).unwrap());
        assert!(s.load(&m).is_err());
        assert_eq!(s.hash().unwrap(), before);
    }
}
