use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::{CoreError, Result};

/// Named parameters and buffers of one network, in registration order.
///
/// Buffers (normalization running statistics) are saved and checksummed with
/// the parameters but are never handed to an optimizer.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<(String, Var, bool)>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn insert(&mut self, name: &str, t: Tensor, trainable: bool) -> Result<Var> {
        if self.entries.iter().any(|(n, _, _)| n == name) {
            return Err(CoreError::Build(format!("duplicate parameter name {name}")));
        }
        let v = Var::from_tensor(&t)?;
        self.entries.push((name.to_string(), v.clone(), trainable));
        Ok(v)
    }

    pub fn param(&mut self, name: &str, t: Tensor) -> Result<Var> {
        self.insert(name, t, true)
    }

    pub fn buffer(&mut self, name: &str, t: Tensor) -> Result<Var> {
        self.insert(name, t, false)
    }

    pub fn trainable(&self) -> Vec<Var> {
        self.entries.iter().filter(|e| e.2).map(|e| e.1.clone()).collect()
    }

    /// Number of trainable scalars.
    pub fn num_params(&self) -> usize {
        self.entries.iter().filter(|e| e.2).map(|e| e.1.elem_count()).sum()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.0.as_str())
    }

    /// SHA-256 over names and raw little-endian values of every entry.
    pub fn checksum(&self) -> Result<String> {
        let mut h = Sha256::new();
        for (name, v, _) in &self.entries {
            h.update(name.as_bytes());
            for x in v.as_tensor().flatten_all()?.to_dtype(DType::F32)?.to_vec1::<f32>()? {
                h.update(x.to_le_bytes());
            }
        }
        Ok(hex::encode(h.finalize()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let map: HashMap<String, Tensor> =
            self.entries.iter().map(|(n, v, _)| (n.clone(), v.as_tensor().clone())).collect();
        candle_core::safetensors::save(&map, path).map_err(|e| CoreError::io(path, e))
    }

    /// Overwrites every entry from a file written by [`ParamStore::save`].
    pub fn load(&self, path: &Path) -> Result<()> {
        let map = candle_core::safetensors::load(path, &Device::Cpu).map_err(|e| CoreError::io(path, e))?;
        if map.len() != self.entries.len() {
            return Err(CoreError::Checkpoint(format!(
                "{} holds {} tensors, network expects {}",
                path.display(),
                map.len(),
                self.entries.len()
            )));
        }
        for (name, v, _) in &self.entries {
            let t = map
                .get(name)
                .ok_or_else(|| CoreError::Checkpoint(format!("{} lacks tensor {name}", path.display())))?;
            if t.shape() != v.shape() {
                return Err(CoreError::Checkpoint(format!(
                    "tensor {name}: stored shape {:?}, expected {:?}",
                    t.dims(),
                    v.dims()
                )));
            }
            v.set(t)?;
        }
        Ok(())
    }
}

/// Seeded parameter initialization (uniform fan-in scaling).
pub struct Initializer {
    rng: ChaCha8Rng,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn fan_in_uniform(&mut self, dims: &[usize], fan_in: usize) -> Result<Tensor> {
        let bound = 1.0 / (fan_in as f32).sqrt();
        let n: usize = dims.iter().product();
        let data: Vec<f32> = (0..n).map(|_| self.rng.random_range(-bound..bound)).collect();
        Ok(Tensor::from_vec(data, dims, &Device::Cpu)?)
    }

    pub fn constant(&self, dims: &[usize], value: f32) -> Result<Tensor> {
        Ok(Tensor::full(value, dims, &Device::Cpu)?)
    }
}
