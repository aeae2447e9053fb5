//! Dense matrices, reverse-mode gradients, parameter storage and a
//! finite-difference gradient checker.

pub mod gradcheck;
pub mod graph;
pub mod nn;
pub mod optim;
pub mod params;
pub mod tensor;

pub use gradcheck::{grad_check, grad_check_entries, DEFAULT_EPS};
pub use graph::{Gradients, Graph, Var};
pub use optim::SgdMomentum;
pub use params::{ParamEntry, ParamStore};
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::{Error, Result};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn store(entries: &[(&str, usize, usize)], seed: u64) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        for &(n, r, c) in entries {
            s.insert_normal(n, r, c, 1.0, &mut rng).unwrap();
        }
        s
    }

    fn check(entries: &[(&str, usize, usize)], f: impl Fn(&mut Graph, &ParamStore) -> Result<Var>) -> f64 {
        let mut worst: f64 = 0.0;
        for seed in 0..4 {
            let s = store(entries, seed);
            worst = worst.max(grad_check(&s, DEFAULT_EPS, &f).unwrap());
        }
        worst
    }

    /// Reduces any node to a scalar with a fixed random weighting so every
    /// output element gets a distinct upstream gradient.
    fn weighted_sum(g: &mut Graph, v: Var) -> Result<Var> {
        let shape = g.value(v).shape().to_vec();
        let n = g.value(v).len();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let w = Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())?;
        let w = g.constant(w)?;
        let p = g.mul(v, w)?;
        g.sum(p)
    }

    #[test]
    fn forward_examples() {
        let mut g = Graph::new();
        let u = g.constant(Tensor::matrix(1, 3, vec![0.3, -2.0, 5.0]).unwrap()).unwrap();
        let c = g.cosine(u, u).unwrap();
        assert!((g.scalar(c).unwrap() - 1.0).abs() < 1e-15);

        let z = g.constant(Tensor::zeros(vec![1, 3])).unwrap();
        let s = g.softmax_rows(z).unwrap();
        for v in g.value(s).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }

        let x = g.constant(Tensor::matrix(1, 2, vec![-1.0, 2.0]).unwrap()).unwrap();
        let r = g.relu(x).unwrap();
        let loss = g.sum(r).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn non_finite_values_are_errors() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::scalar(-1.0)).unwrap();
        assert!(matches!(g.log(x), Err(Error::Numerics(_))));
        let big = g.constant(Tensor::scalar(1000.0)).unwrap();
        assert!(matches!(g.exp(big), Err(Error::Numerics(_))));
        let zero = g.constant(Tensor::zeros(vec![1, 2])).unwrap();
        assert!(g.l2_normalize_rows(zero).is_err());
        assert!(g.constant(Tensor::scalar(f64::NAN)).is_err());
    }

    #[test]
    fn shape_mismatches_are_errors() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(vec![2, 3])).unwrap();
        let b = g.constant(Tensor::zeros(vec![3, 2])).unwrap();
        assert!(matches!(g.add(a, b), Err(Error::Shape(_))));
        assert!(matches!(g.matmul(a, a), Err(Error::Shape(_))));
        assert!(matches!(g.add_bias(a, b), Err(Error::Shape(_))));
        assert!(matches!(g.backward(a), Err(Error::Shape(_))));
    }

    #[test]
    fn sum_of_squares_is_exact() {
        let s = store(&[("x", 3, 4)], 1);
        let err = grad_check(&s, DEFAULT_EPS, |g, s| {
            let x = g.param(s, "x")?;
            let sq = g.mul(x, x)?;
            g.sum(sq)
        })
        .unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn grad_matmul_bias_relu() {
        let err = check(&[("a", 3, 4), ("b", 4, 5), ("bias", 1, 5)], |g, s| {
            let a = g.param(s, "a")?;
            let b = g.param(s, "b")?;
            let bias = g.param(s, "bias")?;
            let m = g.matmul(a, b)?;
            let m = g.add_bias(m, bias)?;
            let r = g.relu(m)?;
            weighted_sum(g, r)
        });
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn grad_matmul_t_and_elementwise() {
        let err = check(&[("a", 3, 4), ("b", 2, 4), ("c", 3, 2)], |g, s| {
            let a = g.param(s, "a")?;
            let b = g.param(s, "b")?;
            let c = g.param(s, "c")?;
            let m = g.matmul_t(a, b)?;
            let m = g.mul(m, c)?;
            let m = g.sub(m, c)?;
            let m = g.add(m, c)?;
            let m = g.scale(m, 0.3)?;
            let m = g.add_scalar(m, 2.0)?;
            weighted_sum(g, m)
        });
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn grad_exp_log_and_reductions() {
        let err = check(&[("a", 3, 4), ("s", 1, 1)], |g, s| {
            let a = g.param(s, "a")?;
            let sc = g.param(s, "s")?;
            let a = g.scale(a, 0.5)?;
            let e = g.exp(a)?;
            let rs = g.row_sums(e)?;
            let l = g.log(rs)?;
            let cm = g.col_means(e)?;
            let cm = g.mul_scalar(cm, sc)?;
            let t1 = weighted_sum(g, l)?;
            let t2 = weighted_sum(g, cm)?;
            let m = g.mean(e)?;
            let t = g.add(t1, t2)?;
            g.add(t, m)
        });
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn grad_structural_ops() {
        let err = check(&[("a", 3, 3), ("b", 3, 2)], |g, s| {
            let a = g.param(s, "a")?;
            let b = g.param(s, "b")?;
            let d = g.diag(a)?;
            let c = g.concat(&[a, b, d])?;
            let sl = g.slice_cols(c, 2, 3)?;
            let r = g.reshape(sl, vec![1, 9])?;
            weighted_sum(g, r)
        });
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn grad_normalize_cosine_softmax() {
        let err = check(&[("a", 3, 5), ("b", 4, 5)], |g, s| {
            let a = g.param(s, "a")?;
            let b = g.param(s, "b")?;
            let n = g.l2_normalize_rows(a)?;
            let c = g.cosine(a, b)?;
            let sm = g.softmax_rows(c)?;
            let ls = g.log_softmax_rows(c)?;
            let pick = g.gather(ls, &[0, 3, 1])?;
            let t1 = weighted_sum(g, n)?;
            let t2 = weighted_sum(g, sm)?;
            let t3 = weighted_sum(g, pick)?;
            let t = g.add(t1, t2)?;
            g.add(t, t3)
        });
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn backward_into_skips_frozen_entries() {
        let s = store(&[("w", 2, 2)], 3);
        let mut frozen = ParamStore::new();
        frozen.insert("f", Tensor::filled(vec![2, 2], 1.0)).unwrap();
        let mut work = s.clone();
        let mut g = Graph::new();
        let w = g.param(&work, "w").unwrap();
        let f = g.frozen(&frozen, "f").unwrap();
        let m = g.mul(w, f).unwrap();
        let l = g.sum(m).unwrap();
        g.backward_into(l, &mut work).unwrap();
        assert_eq!(work.grad("w").unwrap().data(), &[1.0; 4]);
        assert_eq!(frozen.grad("f").unwrap().data(), &[0.0; 4]);
    }
}
