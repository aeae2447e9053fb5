use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

/// A named parameter buffer and its gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub value: Tensor,
    pub grad: Tensor,
}

/// Named parameter buffers with paired gradients, iterated in name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: BTreeMap<String, ParamEntry>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::InvalidInput(format!("duplicate parameter '{name}'")));
        }
        if !value.all_finite() {
            return Err(Error::Numerics(format!("parameter '{name}' is not finite")));
        }
        let grad = Tensor::zeros(value.shape().to_vec());
        self.entries.insert(name, ParamEntry { value, grad });
        Ok(())
    }

    /// Inserts a matrix with i.i.d. `N(0, std^2)` entries.
    pub fn insert_normal<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        std: f64,
        rng: &mut R,
    ) -> Result<()> {
        let data = (0..rows * cols)
            .map(|_| std * rng.sample::<f64, _>(StandardNormal))
            .collect();
        self.insert(name, Tensor::matrix(rows, cols, data)?)
    }

    /// Moves every entry of `other` into this store.
    pub fn merge(&mut self, other: ParamStore) -> Result<()> {
        for (name, e) in other.entries {
            self.insert(name, e.value)?;
        }
        Ok(())
    }

    pub fn entry(&self, name: &str) -> Result<&ParamEntry> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::InvalidInput(format!("no parameter named '{name}'")))
    }

    pub fn entry_mut(&mut self, name: &str) -> Result<&mut ParamEntry> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::InvalidInput(format!("no parameter named '{name}'")))
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        Ok(&self.entry(name)?.value)
    }

    pub fn grad(&self, name: &str) -> Result<&Tensor> {
        Ok(&self.entry(name)?.grad)
    }

    /// Takes an entry out of the store, returning its value.
    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        self.entries.remove(name).map(|e| e.value)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    /// Replaces the values of an existing entry, keeping its shape.
    pub fn set_value(&mut self, name: &str, value: Tensor) -> Result<()> {
        let e = self.entry_mut(name)?;
        if e.value.shape() != value.shape() {
            return Err(Error::Shape(format!(
                "'{name}' has shape {:?}, new value {:?}",
                e.value.shape(),
                value.shape()
            )));
        }
        e.value = value;
        Ok(())
    }

    pub(crate) fn accumulate_grad(&mut self, name: &str, g: &Tensor) -> Result<()> {
        let e = self.entry_mut(name)?;
        if e.grad.len() != g.len() {
            return Err(Error::Shape(format!("gradient for '{name}' has the wrong size")));
        }
        for (a, b) in e.grad.data_mut().iter_mut().zip(g.data()) {
            *a += b;
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for e in self.entries.values_mut() {
            e.grad.data_mut().fill(0.0);
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut ParamEntry)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub(crate) fn bump_step(&mut self) {
        self.step += 1;
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.entries.values().map(|e| e.value.len()).sum()
    }

    /// Keeps only the entries whose name starts with `prefix`.
    pub fn subset(&self, prefix: &str) -> ParamStore {
        ParamStore {
            entries: self
                .entries
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
            step: self.step,
        }
    }

    /// Bitwise equality of names, shapes and values; gradients and the
    /// step counter are ignored.
    pub fn same_values(&self, other: &ParamStore) -> bool {
        self.entries.len() == other.entries.len()
            && self.entries.iter().zip(&other.entries).all(|((ka, a), (kb, b))| {
                ka == kb
                    && a.value.shape() == b.value.shape()
                    && a.value
                        .data()
                        .iter()
                        .zip(b.value.data())
                        .all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}
