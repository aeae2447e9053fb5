//! Linear layers bound from a [`ParamStore`].

use rand::Rng;

use crate::error::Result;
use crate::numerics::graph::{Graph, Var};
use crate::numerics::params::ParamStore;
use crate::numerics::tensor::Tensor;

pub fn weight_name(prefix: &str) -> String {
    format!("{prefix}.weight")
}

pub fn bias_name(prefix: &str) -> String {
    format!("{prefix}.bias")
}

/// Adds `{prefix}.weight` (`[fan_in, fan_out]`, `N(0, gain / fan_in)`) and
/// `{prefix}.bias` (`[1, fan_out]`, `N(0, bias_std^2)`).
pub fn init_linear<R: Rng + ?Sized>(
    store: &mut ParamStore,
    prefix: &str,
    fan_in: usize,
    fan_out: usize,
    gain: f64,
    bias_std: f64,
    rng: &mut R,
) -> Result<()> {
    let std = (gain / fan_in as f64).sqrt();
    store.insert_normal(weight_name(prefix), fan_in, fan_out, std, rng)?;
    if bias_std > 0.0 {
        store.insert_normal(bias_name(prefix), 1, fan_out, bias_std, rng)
    } else {
        store.insert(bias_name(prefix), Tensor::zeros(vec![1, fan_out]))
    }
}

/// Binds an entry, either as a trainable parameter or as a constant.
pub fn bind(g: &mut Graph, store: &ParamStore, name: &str, trainable: bool) -> Result<Var> {
    if trainable {
        g.param(store, name)
    } else {
        g.frozen(store, name)
    }
}

/// `x W + b` for `x: [batch, fan_in]`.
pub fn linear(g: &mut Graph, store: &ParamStore, prefix: &str, x: Var, trainable: bool) -> Result<Var> {
    let w = bind(g, store, &weight_name(prefix), trainable)?;
    let b = bind(g, store, &bias_name(prefix), trainable)?;
    let y = g.matmul(x, w)?;
    g.add_bias(y, b)
}
