use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::ModelError;

#[derive(Debug, Clone, Copy)]
pub(crate) enum Init {
    /// He-uniform from the fan-in.
    He { fan_in: usize },
    /// Uniform with the given standard deviation.
    Std(f64),
    Constant(f64),
}

/// Named trainable tensors in creation order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<(String, Var)>,
}

/// Per-parameter seed, so adding or removing a head never changes the others.
fn param_seed(seed: u64, name: &str) -> u64 {
    let digest = Sha256::new().chain_update(seed.to_le_bytes()).chain_update(name.as_bytes()).finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

impl ParamStore {
    pub(crate) fn create(&mut self, name: String, shape: &[usize], init: Init, seed: u64, device: &Device) -> Result<Tensor, ModelError> {
        let n: usize = shape.iter().product();
        let values: Vec<f32> = match init {
            Init::Constant(c) => vec![c as f32; n],
            Init::He { fan_in } => uniform(n, (6.0 / fan_in as f64).sqrt(), param_seed(seed, &name)),
            Init::Std(std) => uniform(n, std * 3f64.sqrt(), param_seed(seed, &name)),
        };
        let var = Var::from_vec(values, shape, device)?;
        let t = var.as_tensor().clone();
        self.entries.push((name, var));
        Ok(t)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Var)> {
        self.entries.iter().map(|(n, v)| (n.as_str(), v))
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }

    pub fn contains_prefix(&self, prefix: &str) -> bool {
        self.entries.iter().any(|(n, _)| n.starts_with(prefix))
    }

    pub fn num_parameters(&self) -> usize {
        self.entries.iter().map(|(_, v)| v.elem_count()).sum()
    }

    /// SHA-256 over names, shapes and little-endian values.
    pub fn checksum(&self) -> Result<String, ModelError> {
        let mut h = Sha256::new();
        for (name, var) in &self.entries {
            h.update(name.as_bytes());
            for d in var.dims() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in var.flatten_all()?.to_dtype(DType::F32)?.to_vec1::<f32>()? {
                h.update(v.to_le_bytes());
            }
        }
        Ok(format!("{:x}", h.finalize()))
    }
}

fn uniform(n: usize, bound: f64, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-bound..=bound) as f32).collect()
}
