use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::numerics::params::ParamStore;

/// Plain SGD with heavy-ball momentum: `v = mu v + g; theta -= lr v`.
#[derive(Clone, Debug)]
pub struct SgdMomentum {
    pub lr: f64,
    pub momentum: f64,
    velocity: BTreeMap<String, Vec<f64>>,
    frozen: BTreeSet<String>,
}

impl SgdMomentum {
    pub fn new(lr: f64, momentum: f64) -> Self {
        SgdMomentum {
            lr,
            momentum,
            velocity: BTreeMap::new(),
            frozen: BTreeSet::new(),
        }
    }

    /// Excludes an entry from every future update.
    pub fn freeze(&mut self, name: impl Into<String>) {
        self.frozen.insert(name.into());
    }

    /// Applies one update from the accumulated gradients, then clears them.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        for (name, e) in store.iter_mut() {
            if self.frozen.contains(name) {
                continue;
            }
            let v = self
                .velocity
                .entry(name.to_string())
                .or_insert_with(|| vec![0.0; e.value.len()]);
            for ((p, g), vel) in e.value.data_mut().iter_mut().zip(e.grad.data()).zip(v.iter_mut()) {
                *vel = self.momentum * *vel + g;
                *p -= self.lr * *vel;
            }
            if !e.value.all_finite() {
                return Err(Error::Numerics(format!("parameter '{name}' diverged")));
            }
        }
        store.zero_grad();
        store.bump_step();
        Ok(())
    }
}
