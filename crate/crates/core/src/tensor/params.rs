use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct ParamEntry<T: Scalar> {
    pub name: String,
    pub value: Tensor<T>,
    /// Whether AdamW applies decoupled weight decay to this parameter.
    pub decay: bool,
}

/// Named, ordered parameter collection. Models hold `ParamId`s into it.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T: Scalar = f32> {
    entries: Vec<ParamEntry<T>>,
    by_name: HashMap<String, ParamId>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>, decay: bool) -> ParamId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name `{name}`"
        );
        let id = ParamId(self.entries.len());
        self.by_name.insert(name.clone(), id);
        self.entries.push(ParamEntry { name, value, decay });
        id
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<T> {
        &self.entries[id.0]
    }

    pub fn set(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        let slot = &mut self.entries[id.0];
        if slot.value.shape() != value.shape() {
            return Err(Error::shape("param set", slot.value.shape(), value.shape()));
        }
        slot.value = value;
        Ok(())
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut [T] {
        self.entries[id.0].value.data_mut()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamEntry<T>)> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, e)| (ParamId(i), e))
    }

    /// Total scalar count.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.numel()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    value: e.value.cast(),
                    decay: e.decay,
                })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }
}

/// Registers parameters under a dotted namespace with seeded initialisation.
pub struct ParamBuilder<'a, T: Scalar> {
    store: &'a mut ParamStore<T>,
    rng: &'a mut ChaCha8Rng,
    prefix: String,
}

/// ViT-style init scale for weights and tokens.
pub const INIT_STD: f64 = 0.02;

impl<'a, T: Scalar> ParamBuilder<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, rng: &'a mut ChaCha8Rng) -> Self {
        Self {
            store,
            rng,
            prefix: String::new(),
        }
    }

    pub fn sub(&mut self, name: &str) -> ParamBuilder<'_, T> {
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        };
        ParamBuilder {
            store: self.store,
            rng: self.rng,
            prefix,
        }
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    /// Normal(0, std²) truncated to ±2·std by resampling.
    pub fn trunc_normal(&mut self, name: &str, shape: &[usize], std: f64, decay: bool) -> ParamId {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| loop {
                let z: f64 = StandardNormal.sample(&mut *self.rng);
                if z.abs() <= 2.0 {
                    break T::from_f64(z * std);
                }
            })
            .collect();
        let value = Tensor::from_parts(shape.to_vec(), data);
        let name = self.full_name(name);
        self.store.insert(name, value, decay)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], v: f64, decay: bool) -> ParamId {
        let name = self.full_name(name);
        self.store
            .insert(name, Tensor::full(shape, T::from_f64(v)), decay)
    }

    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64, decay: bool) -> ParamId {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| T::from_f64(self.rng.random_range(-bound..=bound)))
            .collect();
        let name = self.full_name(name);
        self.store
            .insert(name, Tensor::from_parts(shape.to_vec(), data), decay)
    }
}
