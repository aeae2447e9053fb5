//! Reverse-mode differentiation over a recorded tape of matrix operations.
//!
//! A [`Graph`] records each operation as it is evaluated. Calling
//! [`Graph::backward`] walks the tape in reverse and returns the gradient of a
//! scalar output with respect to every recorded node; [`Graph::backward_into`]
//! additionally adds the gradients of parameter nodes into a [`ParamStore`].
//!
//! Every forward result is checked for NaN/Inf and fails with
//! [`Error::Numerics`] instead of propagating them.

use crate::error::{Error, Result};
use crate::numerics::params::ParamStore;
use crate::numerics::tensor::{matmul, matmul_t, t_matmul, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Param(String),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MulScalar(Var, Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    RowSums(Var),
    ColMeans(Var),
    Sum(Var),
    Diag(Var),
    Concat(Vec<Var>),
    SliceCols(Var, usize),
    Reshape(Var),
    L2NormalizeRows(Var, Vec<f64>),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    Gather(Var, Vec<usize>),
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of one scalar with respect to every node of a graph.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` if the output does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }
}

fn same_shape(a: &Tensor, b: &Tensor, op: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "{op}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

fn map(a: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(a.shape().to_vec(), a.data().iter().map(|&x| f(x)).collect()).expect("same shape")
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, name: &str) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::Numerics(format!("{name} produced a non-finite value")));
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Value of a one-element node.
    pub fn scalar(&self, v: Var) -> Result<f64> {
        self.value(v).item()
    }

    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        self.push(t, Op::Constant, "constant")
    }

    /// Binds a trainable entry of `store`. Its gradient is delivered by
    /// [`Graph::backward_into`].
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let value = store.value(name)?.clone();
        self.push(value, Op::Param(name.to_string()), "param")
    }

    /// Binds an entry of `store` as a constant; no gradient ever flows to it.
    pub fn frozen(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let value = store.value(name)?.clone();
        self.constant(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = matmul(self.value(a), self.value(b))?;
        self.push(v, Op::MatMul(a, b), "matmul")
    }

    /// `a b^T`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = matmul_t(self.value(a), self.value(b))?;
        self.push(v, Op::MatMulT(a, b), "matmul_t")
    }

    /// Adds a `[1, n]` bias to every row of an `[m, n]` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.value(x).dims2()?;
        let b = self.value(bias);
        if b.shape() != [1, n] {
            return Err(Error::Shape(format!("bias {:?} for a {m}x{n} input", b.shape())));
        }
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(n) {
            for (o, bv) in row.iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
        self.push(out, Op::AddBias(x, bias), "add_bias")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "add")?;
        let v = zip_map(self.value(a), self.value(b), |x, y| x + y);
        self.push(v, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "sub")?;
        let v = zip_map(self.value(a), self.value(b), |x, y| x - y);
        self.push(v, Op::Sub(a, b), "sub")
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "mul")?;
        let v = zip_map(self.value(a), self.value(b), |x, y| x * y);
        self.push(v, Op::Mul(a, b), "mul")
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let v = map(self.value(a), |x| x * s);
        self.push(v, Op::Scale(a, s), "scale")
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        let v = map(self.value(a), |x| x + s);
        self.push(v, Op::AddScalar(a), "add_scalar")
    }

    /// Multiplies every element of `a` by the one-element node `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        let sv = self.value(s).item()?;
        let v = map(self.value(a), |x| x * sv);
        self.push(v, Op::MulScalar(a, s), "mul_scalar")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let v = map(self.value(a), |x| if x > 0.0 { x } else { 0.0 });
        self.push(v, Op::Relu(a), "relu")
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let v = map(self.value(a), f64::exp);
        self.push(v, Op::Exp(a), "exp")
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let v = map(self.value(a), f64::ln);
        self.push(v, Op::Log(a), "log")
    }

    /// `[m, n] -> [m, 1]`.
    pub fn row_sums(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.value(a).dims2()?;
        let data = self.value(a).data().chunks(n.max(1)).map(|r| r.iter().sum()).collect();
        let v = Tensor::matrix(m, 1, data)?;
        self.push(v, Op::RowSums(a), "row_sums")
    }

    /// `[m, n] -> [1, n]`, averaging over rows.
    pub fn col_means(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.value(a).dims2()?;
        if m == 0 {
            return Err(Error::Shape("col_means of an empty matrix".into()));
        }
        let mut out = vec![0.0; n];
        for row in self.value(a).data().chunks(n) {
            for (o, x) in out.iter_mut().zip(row) {
                *o += x;
            }
        }
        out.iter_mut().for_each(|o| *o /= m as f64);
        let v = Tensor::matrix(1, n, out)?;
        self.push(v, Op::ColMeans(a), "col_means")
    }

    /// Sum of all elements as a `[1, 1]` node.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n as f64)
    }

    /// Diagonal of a square matrix as a column `[n, 1]`.
    pub fn diag(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.value(a).dims2()?;
        if m != n {
            return Err(Error::Shape(format!("diag of a {m}x{n} matrix")));
        }
        let data = (0..n).map(|i| self.value(a).data()[i * n + i]).collect();
        let v = Tensor::matrix(n, 1, data)?;
        self.push(v, Op::Diag(a), "diag")
    }

    /// Concatenates matrices with equal row counts along columns.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("concat of nothing".into()))?;
        let (m, _) = self.value(*first).dims2()?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).dims2()?;
            if r != m {
                return Err(Error::Shape(format!("concat rows {r} vs {m}")));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        let v = Tensor::matrix(m, total, out)?;
        self.push(v, Op::Concat(parts.to_vec()), "concat")
    }

    /// Columns `start .. start + len` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.value(a).dims2()?;
        if start + len > n {
            return Err(Error::Shape(format!("columns {start}..{} of {n}", start + len)));
        }
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&self.value(a).row(i)[start..start + len]);
        }
        let v = Tensor::matrix(m, len, out)?;
        self.push(v, Op::SliceCols(a, start), "slice_cols")
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let v = self.value(a).clone().reshaped(shape)?;
        self.push(v, Op::Reshape(a), "reshape")
    }

    /// Scales every row to unit L2 norm. A zero row is an error.
    pub fn l2_normalize_rows(&mut self, a: Var) -> Result<Var> {
        let (_, n) = self.value(a).dims2()?;
        let mut out = self.value(a).clone();
        let mut norms = Vec::new();
        for row in out.data_mut().chunks_mut(n.max(1)) {
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::Numerics("cannot normalize a zero vector".into()));
            }
            row.iter_mut().for_each(|x| *x /= norm);
            norms.push(norm);
        }
        self.push(out, Op::L2NormalizeRows(a, norms), "l2_normalize_rows")
    }

    /// Pairwise cosine similarities between rows: `[m, c] x [n, c] -> [m, n]`.
    pub fn cosine(&mut self, a: Var, b: Var) -> Result<Var> {
        let an = self.l2_normalize_rows(a)?;
        let bn = self.l2_normalize_rows(b)?;
        self.matmul_t(an, bn)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (_, n) = self.value(a).dims2()?;
        let mut out = self.value(a).clone();
        for row in out.data_mut().chunks_mut(n.max(1)) {
            softmax_in_place(row);
        }
        self.push(out, Op::SoftmaxRows(a), "softmax_rows")
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (_, n) = self.value(a).dims2()?;
        let mut out = self.value(a).clone();
        for row in out.data_mut().chunks_mut(n.max(1)) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|x| *x -= lse);
        }
        self.push(out, Op::LogSoftmaxRows(a), "log_softmax_rows")
    }

    /// Picks `a[i, idx[i]]` for every row, giving `[m, 1]`.
    pub fn gather(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let (m, n) = self.value(a).dims2()?;
        if idx.len() != m {
            return Err(Error::Shape(format!("{} indices for {m} rows", idx.len())));
        }
        if let Some(&bad) = idx.iter().find(|&&j| j >= n) {
            return Err(Error::InvalidInput(format!("index {bad} out of range for {n} columns")));
        }
        let data = idx.iter().enumerate().map(|(i, &j)| self.value(a).data()[i * n + j]).collect();
        let v = Tensor::matrix(m, 1, data)?;
        self.push(v, Op::Gather(a, idx.to_vec()), "gather")
    }

    /// Gradients of the one-element node `output` with respect to all nodes.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out = self.value(output);
        if out.len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar output, got shape {:?}",
                out.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Tensor::filled(out.shape().to_vec(), 1.0));

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].clone() else {
                continue;
            };
            let node = &self.nodes[idx];
            let y = &node.value;
            let mut send = |v: Var, t: Tensor| accumulate(&mut grads, v, t);
            match &node.op {
                Op::Constant | Op::Param(_) => {}
                Op::MatMul(a, b) => {
                    send(*a, matmul_t(&g, self.value(*b))?);
                    send(*b, t_matmul(self.value(*a), &g)?);
                }
                Op::MatMulT(a, b) => {
                    send(*a, matmul(&g, self.value(*b))?);
                    send(*b, t_matmul(&g, self.value(*a))?);
                }
                Op::AddBias(x, b) => {
                    let (_, n) = g.dims2()?;
                    let mut gb = vec![0.0; n];
                    for row in g.data().chunks(n) {
                        for (o, v) in gb.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                    send(*b, Tensor::matrix(1, n, gb)?);
                    send(*x, g);
                }
                Op::Add(a, b) => {
                    send(*b, g.clone());
                    send(*a, g);
                }
                Op::Sub(a, b) => {
                    send(*b, map(&g, |v| -v));
                    send(*a, g);
                }
                Op::Mul(a, b) => {
                    send(*a, zip_map(&g, self.value(*b), |u, v| u * v));
                    send(*b, zip_map(&g, self.value(*a), |u, v| u * v));
                }
                Op::Scale(a, s) => send(*a, map(&g, |v| v * s)),
                Op::AddScalar(a) | Op::Reshape(a) => {
                    let shape = self.value(*a).shape().to_vec();
                    send(*a, g.reshaped(shape)?);
                }
                Op::MulScalar(a, s) => {
                    let sv = self.value(*s).item()?;
                    let gs: f64 = g.data().iter().zip(self.value(*a).data()).map(|(u, v)| u * v).sum();
                    send(*s, Tensor::new(self.value(*s).shape().to_vec(), vec![gs])?);
                    send(*a, map(&g, |v| v * sv));
                }
                Op::Relu(a) => send(*a, zip_map(&g, self.value(*a), |u, x| if x > 0.0 { u } else { 0.0 })),
                Op::Exp(a) => send(*a, zip_map(&g, y, |u, e| u * e)),
                Op::Log(a) => send(*a, zip_map(&g, self.value(*a), |u, x| u / x)),
                Op::RowSums(a) => {
                    let (m, n) = self.value(*a).dims2()?;
                    let data = (0..m * n).map(|i| g.data()[i / n]).collect();
                    send(*a, Tensor::matrix(m, n, data)?);
                }
                Op::ColMeans(a) => {
                    let (m, n) = self.value(*a).dims2()?;
                    let data = (0..m * n).map(|i| g.data()[i % n] / m as f64).collect();
                    send(*a, Tensor::matrix(m, n, data)?);
                }
                Op::Sum(a) => {
                    let gv = g.item()?;
                    send(*a, Tensor::filled(self.value(*a).shape().to_vec(), gv));
                }
                Op::Diag(a) => {
                    let (n, _) = self.value(*a).dims2()?;
                    let mut t = Tensor::zeros(vec![n, n]);
                    for i in 0..n {
                        t.data_mut()[i * n + i] = g.data()[i];
                    }
                    send(*a, t);
                }
                Op::Concat(parts) => {
                    let (m, total) = g.dims2()?;
                    let mut offset = 0;
                    for &p in parts {
                        let (_, c) = self.value(p).dims2()?;
                        let mut d = Vec::with_capacity(m * c);
                        for i in 0..m {
                            d.extend_from_slice(&g.data()[i * total + offset..i * total + offset + c]);
                        }
                        offset += c;
                        send(p, Tensor::matrix(m, c, d)?);
                    }
                }
                Op::SliceCols(a, start) => {
                    let (m, n) = self.value(*a).dims2()?;
                    let (_, len) = g.dims2()?;
                    let mut t = Tensor::zeros(vec![m, n]);
                    for i in 0..m {
                        t.data_mut()[i * n + start..i * n + start + len].copy_from_slice(g.row(i));
                    }
                    send(*a, t);
                }
                Op::L2NormalizeRows(a, norms) => {
                    let (m, n) = y.dims2()?;
                    let mut d = vec![0.0; m * n];
                    for i in 0..m {
                        let yr = y.row(i);
                        let gr = g.row(i);
                        let proj: f64 = yr.iter().zip(gr).map(|(u, v)| u * v).sum();
                        for j in 0..n {
                            d[i * n + j] = (gr[j] - yr[j] * proj) / norms[i];
                        }
                    }
                    send(*a, Tensor::matrix(m, n, d)?);
                }
                Op::SoftmaxRows(a) => {
                    let (m, n) = y.dims2()?;
                    let mut d = vec![0.0; m * n];
                    for i in 0..m {
                        let yr = y.row(i);
                        let gr = g.row(i);
                        let s: f64 = yr.iter().zip(gr).map(|(u, v)| u * v).sum();
                        for j in 0..n {
                            d[i * n + j] = yr[j] * (gr[j] - s);
                        }
                    }
                    send(*a, Tensor::matrix(m, n, d)?);
                }
                Op::LogSoftmaxRows(a) => {
                    let (m, n) = y.dims2()?;
                    let mut d = vec![0.0; m * n];
                    for i in 0..m {
                        let yr = y.row(i);
                        let gr = g.row(i);
                        let s: f64 = gr.iter().sum();
                        for j in 0..n {
                            d[i * n + j] = gr[j] - yr[j].exp() * s;
                        }
                    }
                    send(*a, Tensor::matrix(m, n, d)?);
                }
                Op::Gather(a, idx) => {
                    let (m, n) = self.value(*a).dims2()?;
                    let mut t = Tensor::zeros(vec![m, n]);
                    for (i, &j) in idx.iter().enumerate() {
                        t.data_mut()[i * n + j] = g.data()[i];
                    }
                    send(*a, t);
                }
            }
        }
        Ok(Gradients { grads })
    }

    /// Runs [`Graph::backward`] and adds every parameter node's gradient to
    /// the matching entry of `store`. Returns the value of `output`.
    pub fn backward_into(&self, output: Var, store: &mut ParamStore) -> Result<f64> {
        let grads = self.backward(output)?;
        for (i, node) in self.nodes.iter().enumerate().take(output.0 + 1) {
            if let (Op::Param(name), Some(g)) = (&node.op, grads.grads[i].as_ref()) {
                store.accumulate_grad(name, g)?;
            }
        }
        self.scalar(output)
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, t: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, x) in existing.data_mut().iter_mut().zip(t.data()) {
                *e += x;
            }
        }
        slot @ None => *slot = Some(t),
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    row.iter_mut().for_each(|x| *x /= total);
}
