//! Named, ordered collections of trainable parameters.

use std::collections::HashMap;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Scalar;
use crate::tensor::{Array, Tensor};

/// Handle to one entry of a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Parameters in insertion order, addressed by unique dotted names.
#[derive(Clone, Debug)]
pub struct ParamStore<T: Scalar> {
    seed: u64,
    names: Vec<String>,
    values: Vec<Array<T>>,
    index: HashMap<String, ParamId>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            names: Vec::new(),
            values: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn insert(&mut self, name: &str, value: Array<T>) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::invalid(format!("duplicate parameter name {name}")));
        }
        let id = ParamId(self.values.len());
        self.names.push(name.to_owned());
        self.values.push(value);
        self.index.insert(name.to_owned(), id);
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Array<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array<T> {
        &mut self.values[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Array<T>> {
        self.id(name).map(|id| self.get(id))
    }

    /// Replaces a value, keeping its shape.
    pub fn set(&mut self, id: ParamId, value: Array<T>) -> Result<()> {
        if value.shape() != self.values[id.0].shape() {
            return Err(Error::shape("set", self.values[id.0].shape(), value.shape()));
        }
        self.values[id.0] = value;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array<T>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Total number of scalar parameters.
    pub fn num_elements(&self) -> usize {
        self.values.iter().map(Array::len).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            seed: self.seed,
            names: self.names.clone(),
            values: self.values.iter().map(Array::cast).collect(),
            index: self.index.clone(),
        }
    }

    /// Fresh differentiable leaves for one forward/backward pass.
    pub fn bind(&self) -> Bound<T> {
        Bound {
            leaves: self.values.iter().map(|v| Tensor::param(v.clone())).collect(),
        }
    }

    /// Leaves that do not require gradients (inference).
    pub fn bind_frozen(&self) -> Bound<T> {
        Bound {
            leaves: self.values.iter().map(|v| Tensor::constant(v.clone())).collect(),
        }
    }

    pub fn builder(&mut self, prefix: &str) -> ParamBuilder<'_, T> {
        ParamBuilder {
            store: self,
            prefix: prefix.to_owned(),
        }
    }
}

/// Parameters of a [`ParamStore`] materialized as graph leaves.
pub struct Bound<T: Scalar> {
    leaves: Vec<Tensor<T>>,
}

impl<T: Scalar> Bound<T> {
    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.leaves[id.0]
    }

    /// Gradients after `backward`, one slot per parameter.
    pub fn grads(&self) -> Vec<Option<Array<T>>> {
        self.leaves.iter().map(Tensor::grad).collect()
    }
}

/// Registers parameters under a name prefix with seeded initial values.
///
/// Each parameter draws from its own stream derived from the store seed and
/// its full name, so initial values do not depend on registration order.
pub struct ParamBuilder<'a, T: Scalar> {
    store: &'a mut ParamStore<T>,
    prefix: String,
}

impl<T: Scalar> ParamBuilder<'_, T> {
    pub fn sub(&mut self, name: &str) -> ParamBuilder<'_, T> {
        ParamBuilder {
            prefix: self.full(name),
            store: self.store,
        }
    }

    fn full(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_owned()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> Result<ParamId> {
        let full = self.full(name);
        self.store.insert(&full, Array::full(shape, T::of(value)))
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        self.constant(name, shape, 0.0)
    }

    /// Normal(0, std²), truncated to two standard deviations.
    pub fn normal(&mut self, name: &str, shape: &[usize], std: f64) -> Result<ParamId> {
        let full = self.full(name);
        let mut r = rng::named_rng(self.store.seed, &full);
        let value = Array::from_fn(shape, |_| loop {
            let z: f64 = StandardNormal.sample(&mut r);
            if z.abs() <= 2.0 {
                break T::of(z * std);
            }
        });
        self.store.insert(&full, value)
    }

    /// Uniform(-bound, bound).
    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> Result<ParamId> {
        let full = self.full(name);
        let mut r = rng::named_rng(self.store.seed, &full);
        let value = Array::from_fn(shape, |_| T::of(r.random_range(-bound..=bound)));
        self.store.insert(&full, value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique_and_ordered() {
        let mut store = ParamStore::<f32>::new(1);
        let mut b = store.builder("enc");
        b.zeros("a", &[2]).unwrap();
        b.sub("blk").normal("w", &[3, 3], 0.02).unwrap();
        assert!(b.zeros("a", &[1]).is_err());
        let names: Vec<&str> = store.iter().map(|(n, _)| n).collect();
        assert_eq!(names, ["enc.a", "enc.blk.w"]);
    }

    #[test]
    fn init_is_order_independent() {
        let mut s1 = ParamStore::<f64>::new(9);
        s1.builder("m").normal("x", &[4], 1.0).unwrap();
        s1.builder("m").normal("y", &[4], 1.0).unwrap();
        let mut s2 = ParamStore::<f64>::new(9);
        s2.builder("m").normal("y", &[4], 1.0).unwrap();
        s2.builder("m").normal("x", &[4], 1.0).unwrap();
        assert_eq!(s1.by_name("m.y"), s2.by_name("m.y"));
        assert_ne!(s1.by_name("m.x"), s1.by_name("m.y"));
    }
}
