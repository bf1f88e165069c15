//! Named, seeded model parameters.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub trainable: bool,
}

#[derive(Clone, Copy, Debug)]
pub enum Init {
    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    Uniform { fan_in: usize },
    Const(f64),
}

/// Owns every parameter of a model. Names are unique; insertion order is stable.
#[derive(Clone, Debug)]
pub struct ParamStore {
    params: Vec<Parameter>,
    rng: ChaCha8Rng,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        Self {
            params: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], init: Init) -> Result<ParamId> {
        let name = name.into();
        if self.params.iter().any(|p| p.name == name) {
            return Err(Error::InvalidConfig(format!("duplicate parameter name {name:?}")));
        }
        let n: usize = shape.iter().product();
        let data = match init {
            Init::Uniform { fan_in } => {
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                (0..n).map(|_| self.rng.gen_range(-bound..=bound)).collect()
            }
            Init::Const(c) => vec![c; n],
        };
        self.params.push(Parameter {
            name,
            value: Tensor::new(shape.to_vec(), data)?,
            trainable: true,
        });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(|p| p.value.zero_grad());
    }

    /// Plain SGD step over trainable parameters that received a gradient.
    pub fn sgd_step(&mut self, lr: f64) {
        for p in self.params.iter_mut().filter(|p| p.trainable) {
            if let Some(g) = p.value.grad().map(<[f64]>::to_vec) {
                p.value
                    .data_mut()
                    .iter_mut()
                    .zip(&g)
                    .for_each(|(w, g)| *w -= lr * g);
            }
        }
    }

    /// Replaces values from `other`, matching by name and shape.
    pub fn load_from(&mut self, other: &[Parameter]) -> Result<()> {
        if other.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} tensors, model expects {}",
                other.len(),
                self.params.len()
            )));
        }
        for src in other {
            let id = self
                .by_name(&src.name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {:?}", src.name)))?;
            let dst = &mut self.params[id.0];
            if dst.value.shape() != src.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {:?}: checkpoint shape {:?}, model shape {:?}",
                    src.name,
                    src.value.shape(),
                    dst.value.shape()
                )));
            }
            dst.value = src.value.clone();
        }
        Ok(())
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_init_is_bitwise_reproducible() {
        let build = |seed| {
            let mut s = ParamStore::new(seed);
            s.add("w", &[4, 3], Init::Uniform { fan_in: 3 }).unwrap();
            s.add("b", &[4], Init::Const(0.0)).unwrap();
            s
        };
        let (a, b) = (build(11), build(11));
        let bits = |s: &ParamStore| -> Vec<u64> {
            s.iter().flat_map(|p| p.value.data().iter().map(|v| v.to_bits())).collect()
        };
        assert_eq!(bits(&a), bits(&b));
        assert_ne!(bits(&a), bits(&build(12)));
        let bound = 1.0 / 3f64.sqrt();
        assert!(a.get(ParamId(0)).value.data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn names_are_unique() {
        let mut s = ParamStore::new(0);
        s.add("w", &[1], Init::Const(1.0)).unwrap();
        assert!(s.add("w", &[1], Init::Const(1.0)).is_err());
    }
}
