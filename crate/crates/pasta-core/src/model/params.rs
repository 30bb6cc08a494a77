//! Ordered, named parameter registry. Creation order is fixed by the model
//! builder, which makes initialization, checkpoints and optimizer state all
//! reproducible from a seed.

use std::collections::HashMap;

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{init, Tensor};

#[derive(Default)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> ParamSet {
        ParamSet::default()
    }

    pub fn create(&mut self, name: &str, shape: &[usize], data: Vec<f32>) -> Result<Tensor> {
        if self.index.contains_key(name) {
            return Err(Error::arg(format!("duplicate parameter name {name}")));
        }
        let t = Tensor::leaf(shape, data)?;
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push((name.to_string(), t.clone()));
        Ok(t)
    }

    pub fn trunc_normal(
        &mut self,
        rng: &mut ChaCha8Rng,
        name: &str,
        shape: &[usize],
        sigma: f32,
    ) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        self.create(name, shape, init::trunc_normal(rng, n, sigma))
    }

    pub fn uniform_fan_in(
        &mut self,
        rng: &mut ChaCha8Rng,
        name: &str,
        shape: &[usize],
        fan_in: usize,
    ) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        self.create(name, shape, init::uniform_fan_in(rng, n, fan_in))
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        self.create(name, shape, init::zeros(n))
    }

    pub fn ones(&mut self, name: &str, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        self.create(name, shape, init::ones(n))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count across all parameters.
    pub fn count_scalars(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn zero_grads(&self) {
        for (_, t) in &self.entries {
            t.zero_grad();
        }
    }

    /// Overwrite parameter data from a name -> buffer map (checkpoint load).
    pub fn load_values(&self, values: &HashMap<String, (Vec<usize>, Vec<f32>)>) -> Result<()> {
        if values.len() != self.entries.len() {
            return Err(Error::CheckpointMismatch {
                field: "parameter count".into(),
                stored: values.len().to_string(),
                requested: self.entries.len().to_string(),
            });
        }
        for (name, t) in &self.entries {
            let (shape, data) = values.get(name).ok_or_else(|| Error::CheckpointMismatch {
                field: format!("parameter {name}"),
                stored: "missing".into(),
                requested: format!("{:?}", t.shape()),
            })?;
            if shape != t.shape() {
                return Err(Error::CheckpointMismatch {
                    field: format!("parameter {name}"),
                    stored: format!("{:?}", shape),
                    requested: format!("{:?}", t.shape()),
                });
            }
            t.data_mut().copy_from_slice(data);
        }
        Ok(())
    }
}
