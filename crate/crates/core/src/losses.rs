//! Contrastive pre-training objectives and the supervised cross-entropy.
//!
//! With `e(a, b) = exp(a . b / tau)`, one direction of the InfoNCE loss for
//! anchor `i` over a batch of paired rows `x`, `y` is
//!
//! ```text
//! l_i(x, y) = -log( e(x_i, y_i) / (sum_k [e(x_i, x_k) + e(x_i, y_k)] - e(x_i, x_i)) )
//! ```
//!
//! and the symmetric loss averages `l_i(x, y) + l_i(y, x)` over `2N`. The
//! intra-modality loss pairs the two jittered depth renders; the
//! cross-modality loss pairs their (unnormalized) mean with the image-proxy
//! feature.

use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamStore, Tensor, Var};

pub const DEFAULT_TAU: f64 = 0.7;

/// Name of the learnable `log sigma` balancing the two contrastive terms.
pub const BALANCE_PARAM: &str = "balance.log_sigma";

/// `exp(a . b / tau)`.
pub fn sim(a: &[f64], b: &[f64], tau: f64) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (dot / tau).exp()
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("temperature must be positive, got {tau}")))
    }
}

/// Per-anchor terms `l_i(x, y)` as an `[N, 1]` column.
pub fn info_nce_direction(g: &mut Graph, x: Var, y: Var, tau: f64) -> Result<Var> {
    check_tau(tau)?;
    let (n, _) = g.value(x).dims2()?;
    let xx = g.matmul_t(x, x)?;
    let xx = g.scale(xx, 1.0 / tau)?;
    let exx = g.exp(xx)?;
    let xy = g.matmul_t(x, y)?;
    let xy = g.scale(xy, 1.0 / tau)?;
    let exy = g.exp(xy)?;

    // The self-similarity is dropped by masking rather than subtracting, so
    // the denominator is exact when it reduces to the positive term.
    let mut mask = Tensor::filled(vec![n, n], 1.0);
    for i in 0..n {
        mask.data_mut()[i * n + i] = 0.0;
    }
    let mask = g.constant(mask)?;
    let exx = g.mul(exx, mask)?;
    let neg = g.row_sums(exx)?;
    let all = g.row_sums(exy)?;
    let den = g.add(neg, all)?;
    let pos = g.diag(exy)?;
    let log_den = g.log(den)?;
    let log_pos = g.log(pos)?;
    g.sub(log_den, log_pos)
}

/// `(1 / 2N) sum_i [l_i(x, y) + l_i(y, x)]` as a `[1, 1]` node.
pub fn symmetric_info_nce(g: &mut Graph, x: Var, y: Var, tau: f64) -> Result<Var> {
    let (n, c) = g.value(x).dims2()?;
    if g.value(y).dims2()? != (n, c) {
        return Err(Error::Shape("paired features must have equal shapes".into()));
    }
    if n == 0 {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let a = info_nce_direction(g, x, y, tau)?;
    let b = info_nce_direction(g, y, x, tau)?;
    let both = g.add(a, b)?;
    let s = g.sum(both)?;
    g.scale(s, 1.0 / (2.0 * n as f64))
}

/// Intra-modality loss between features of the two jittered renders.
pub fn intra_loss(g: &mut Graph, d1: Var, d2: Var, tau: f64) -> Result<Var> {
    symmetric_info_nce(g, d1, d2, tau)
}

/// Cross-modality loss between the mean depth feature and the image-proxy
/// feature. The mean is used as is, without renormalization.
pub fn cross_loss(g: &mut Graph, d1: Var, d2: Var, image: Var, tau: f64) -> Result<Var> {
    let sum = g.add(d1, d2)?;
    let mean = g.scale(sum, 0.5)?;
    symmetric_info_nce(g, mean, image, tau)
}

/// `intra / sigma^2 + cross + log(sigma + 1)` with `sigma = exp(log_sigma)`.
pub fn total_loss(g: &mut Graph, intra: Var, cross: Var, log_sigma: Var) -> Result<Var> {
    let inv_var = g.scale(log_sigma, -2.0)?;
    let inv_var = g.exp(inv_var)?;
    let weighted = g.mul(intra, inv_var)?;
    let sigma = g.exp(log_sigma)?;
    let reg = g.add_scalar(sigma, 1.0)?;
    let reg = g.log(reg)?;
    let l = g.add(weighted, cross)?;
    g.add(l, reg)
}

/// Learnable positive balance between the contrastive terms, stored as
/// `log sigma`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBalance {
    pub sigma: f64,
}

impl Default for LossBalance {
    fn default() -> Self {
        LossBalance { sigma: 1.0 }
    }
}

impl LossBalance {
    pub fn from_store(store: &ParamStore) -> Result<Self> {
        Ok(LossBalance {
            sigma: store.value(BALANCE_PARAM)?.item()?.exp(),
        })
    }

    pub fn insert_into(&self, store: &mut ParamStore) -> Result<()> {
        if !(self.sigma > 0.0) {
            return Err(Error::InvalidInput("sigma must be positive".into()));
        }
        store.insert(BALANCE_PARAM, Tensor::scalar(self.sigma.ln()))
    }
}

/// Mean of `-log softmax(logits)[label]` over rows.
pub fn cross_entropy(g: &mut Graph, logits: Var, labels: &[usize]) -> Result<Var> {
    let ls = g.log_softmax_rows(logits)?;
    let picked = g.gather(ls, labels)?;
    let m = g.mean(picked)?;
    g.scale(m, -1.0)
}

/// Features of one contrastive batch: two jittered depth renders and the
/// image proxy for each of `N` samples.
#[derive(Clone, Debug)]
pub struct ContrastiveBatch {
    pub d1: Tensor,
    pub d2: Tensor,
    pub image: Tensor,
}

impl ContrastiveBatch {
    fn eval(&self, f: impl FnOnce(&mut Graph, Var, Var, Var) -> Result<Var>) -> Result<f64> {
        let mut g = Graph::new();
        let d1 = g.constant(self.d1.clone())?;
        let d2 = g.constant(self.d2.clone())?;
        let im = g.constant(self.image.clone())?;
        let out = f(&mut g, d1, d2, im)?;
        g.scalar(out)
    }

    pub fn intra_loss(&self, tau: f64) -> Result<f64> {
        self.eval(|g, d1, d2, _| intra_loss(g, d1, d2, tau))
    }

    pub fn cross_loss(&self, tau: f64) -> Result<f64> {
        self.eval(|g, d1, d2, im| cross_loss(g, d1, d2, im, tau))
    }
}

/// `-log softmax(logits)[label]` for one row of logits.
pub fn cross_entropy_value(logits: &[f64], label: usize) -> Result<f64> {
    if label >= logits.len() {
        return Err(Error::InvalidInput(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let mut g = Graph::new();
    let l = g.constant(Tensor::matrix(1, logits.len(), logits.to_vec())?)?;
    let ce = cross_entropy(&mut g, l, &[label])?;
    g.scalar(ce)
}

/// Evaluates the balanced objective on plain numbers.
pub fn total_loss_value(intra: f64, cross: f64, balance: LossBalance) -> Result<f64> {
    let mut g = Graph::new();
    let i = g.constant(Tensor::scalar(intra))?;
    let c = g.constant(Tensor::scalar(cross))?;
    let s = g.constant(Tensor::scalar(balance.sigma.ln()))?;
    let l = total_loss(&mut g, i, c, s)?;
    g.scalar(l)
}
