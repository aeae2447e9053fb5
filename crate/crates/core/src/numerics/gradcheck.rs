//! Central finite-difference verification of analytic gradients.

use crate::error::Result;
use crate::numerics::graph::{Graph, Var};
use crate::numerics::params::ParamStore;

pub const DEFAULT_EPS: f64 = 1e-5;

/// Largest relative disagreement between the analytic gradient of `f` and
/// central differences, over every coordinate of every entry of `params`.
///
/// `f` builds a scalar loss on a fresh graph, binding trainable entries with
/// [`Graph::param`]. The relative error of one coordinate is
/// `|a - n| / max(1e-8, |a| + |n|)`.
pub fn grad_check<F>(params: &ParamStore, eps: f64, f: F) -> Result<f64>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let names: Vec<String> = params.names().map(str::to_string).collect();
    grad_check_entries(params, &names, eps, f)
}

/// [`grad_check`] restricted to the named entries.
pub fn grad_check_entries<F>(params: &ParamStore, names: &[String], eps: f64, f: F) -> Result<f64>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut work = params.clone();
    work.zero_grad();
    let mut g = Graph::new();
    let out = f(&mut g, &work)?;
    g.backward_into(out, &mut work)?;
    let analytic = work.clone();

    let eval = |store: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let out = f(&mut g, store)?;
        g.scalar(out)
    };

    let mut worst: f64 = 0.0;
    for name in names {
        let n = work.value(name)?.len();
        for i in 0..n {
            let orig = work.value(name)?.data()[i];
            work.entry_mut(name)?.value.data_mut()[i] = orig + eps;
            let plus = eval(&work)?;
            work.entry_mut(name)?.value.data_mut()[i] = orig - eps;
            let minus = eval(&work)?;
            work.entry_mut(name)?.value.data_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.grad(name)?.data()[i];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
