//! Classification heads over multi-view features.
//!
//! * Zero-shot: cosine logits against the anchors, averaged over views.
//! * Global-view aggregator: `g(F) = f2(ReLU(f1(concat_v F_v)))`.
//! * Gated dual-path adapter: `G = gate * g_clip(F^C) + g_depth(F^D)`,
//!   logits `cos(G, T_k)`.
//! * Single path: the dual-path head without the frozen-tower branch.
//! * Inter-view baseline: `F'_v = F_v + ReLU(g(F) W_v^T)`, logits
//!   `sum_v alpha_v cos(F'_v, T_k)`.
//!
//! Multi-view inputs are `[batch, views * dim]` matrices whose rows hold the
//! per-view features back to back in view order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoders::AnchorBank;
use crate::error::{Error, Result};
use crate::numerics::nn::{bind, init_linear, linear};
use crate::numerics::{Graph, ParamStore, Tensor, Var};

pub const DEPTH_PATH: &str = "head.depth";
pub const CLIP_PATH: &str = "head.clip";
pub const INTERVIEW: &str = "head.inter";
pub const GATE_PARAM: &str = "head.gate";
pub const DEFAULT_GATE_INIT: f64 = 0.5;

/// View-averaged cosine logits for one object: `view_features` is `[V, C]`.
pub fn zero_shot_logits(view_features: &Tensor, anchors: &AnchorBank) -> Result<Vec<f64>> {
    let (v, c) = view_features.dims2()?;
    if v == 0 {
        return Err(Error::InvalidInput("zero-shot logits need at least one view".into()));
    }
    if c != anchors.dim() {
        return Err(Error::Shape(format!("features have dim {c}, anchors {}", anchors.dim())));
    }
    let mut g = Graph::new();
    let f = g.constant(view_features.clone())?;
    let t = g.constant(anchors.to_tensor())?;
    let cos = g.cosine(f, t)?;
    let l = g.col_means(cos)?;
    Ok(g.value(l).data().to_vec())
}

/// Index of the largest logit; ties go to the lowest index.
pub fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut p = logits.to_vec();
    crate::numerics::graph::softmax_in_place(&mut p);
    p
}

/// Adds an aggregator `f1: [views * dim, hidden]`, `f2: [hidden, dim]`
/// under `prefix`.
pub fn init_aggregator(
    store: &mut ParamStore,
    prefix: &str,
    views: usize,
    dim: usize,
    hidden: usize,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    init_linear(store, &format!("{prefix}.f1"), views * dim, hidden, 2.0, 0.0, rng)?;
    init_linear(store, &format!("{prefix}.f2"), hidden, dim, 1.0, 0.0, rng)
}

/// `[batch, views * dim] -> [batch, dim]`; the output is not normalized.
pub fn global_aggregate(g: &mut Graph, store: &ParamStore, prefix: &str, features: Var, trainable: bool) -> Result<Var> {
    let w = store.value(&format!("{prefix}.f1.weight"))?;
    let (fan_in, _) = w.dims2()?;
    let (_, width) = g.value(features).dims2()?;
    if width != fan_in {
        return Err(Error::Shape(format!(
            "aggregator '{prefix}' expects {fan_in} concatenated features, got {width}"
        )));
    }
    let h = linear(g, store, &format!("{prefix}.f1"), features, trainable)?;
    let h = g.relu(h)?;
    linear(g, store, &format!("{prefix}.f2"), h, trainable)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadKind {
    Gdpa,
    SinglePath,
    Interview,
}

impl std::str::FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gdpa" => Ok(HeadKind::Gdpa),
            "single-path" | "single" => Ok(HeadKind::SinglePath),
            "interview" | "inter-view" => Ok(HeadKind::Interview),
            other => Err(Error::InvalidInput(format!("unknown head '{other}'"))),
        }
    }
}

impl std::fmt::Display for HeadKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            HeadKind::Gdpa => "gdpa",
            HeadKind::SinglePath => "single-path",
            HeadKind::Interview => "interview",
        })
    }
}

/// Shape and initialization of a head.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadSpec {
    pub kind: HeadKind,
    pub views: usize,
    pub dim: usize,
    pub gate_init: f64,
    /// Per-view weights of the inter-view baseline; uniform when `None`.
    pub alpha: Option<Vec<f64>>,
}

impl HeadSpec {
    pub fn new(kind: HeadKind, views: usize, dim: usize) -> Self {
        HeadSpec {
            kind,
            views,
            dim,
            gate_init: DEFAULT_GATE_INIT,
            alpha: None,
        }
    }

    pub fn alpha(&self) -> Result<Vec<f64>> {
        match &self.alpha {
            Some(a) if a.len() != self.views => Err(Error::Shape(format!(
                "{} view weights for {} views",
                a.len(),
                self.views
            ))),
            Some(a) => Ok(a.clone()),
            None => Ok(vec![1.0 / self.views as f64; self.views]),
        }
    }
}

/// Fresh head parameters. The depth path is always drawn first, so a
/// single-path head and a dual-path head with the same seed share it.
pub fn init_head(spec: &HeadSpec, seed: u64) -> Result<ParamStore> {
    if spec.views == 0 || spec.dim == 0 {
        return Err(Error::InvalidInput("head needs views >= 1 and dim >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    // Hidden width equals the feature dim.
    let hidden = spec.dim;
    match spec.kind {
        HeadKind::Gdpa => {
            init_aggregator(&mut store, DEPTH_PATH, spec.views, spec.dim, hidden, &mut rng)?;
            init_aggregator(&mut store, CLIP_PATH, spec.views, spec.dim, hidden, &mut rng)?;
            store.insert(GATE_PARAM, Tensor::scalar(spec.gate_init))?;
        }
        HeadKind::SinglePath => {
            init_aggregator(&mut store, DEPTH_PATH, spec.views, spec.dim, hidden, &mut rng)?;
        }
        HeadKind::Interview => {
            init_aggregator(&mut store, INTERVIEW, spec.views, spec.dim, hidden, &mut rng)?;
            let std = (1.0 / spec.dim as f64).sqrt();
            for v in 0..spec.views {
                store.insert_normal(format!("{INTERVIEW}.view{v}"), spec.dim, spec.dim, std, &mut rng)?;
            }
        }
    }
    Ok(store)
}

/// Dual-path logits `cos(gate * g_clip(F^C) + g_depth(F^D), T_k)`.
pub fn gdpa_logits(
    g: &mut Graph,
    store: &ParamStore,
    depth: Var,
    clip: Var,
    anchors: Var,
    trainable: bool,
) -> Result<Var> {
    if g.value(depth).shape() != g.value(clip).shape() {
        return Err(Error::Shape("both paths must supply the same views".into()));
    }
    let gd = global_aggregate(g, store, DEPTH_PATH, depth, trainable)?;
    let gc = global_aggregate(g, store, CLIP_PATH, clip, trainable)?;
    let gate = bind(g, store, GATE_PARAM, trainable)?;
    let gated = g.mul_scalar(gc, gate)?;
    let fused = g.add(gated, gd)?;
    g.cosine(fused, anchors)
}

/// Logits `cos(g_depth(F^D), T_k)`.
pub fn single_path_logits(g: &mut Graph, store: &ParamStore, depth: Var, anchors: Var, trainable: bool) -> Result<Var> {
    let gd = global_aggregate(g, store, DEPTH_PATH, depth, trainable)?;
    g.cosine(gd, anchors)
}

/// Residual inter-view adapter logits.
pub fn interview_logits(
    g: &mut Graph,
    store: &ParamStore,
    features: Var,
    views: usize,
    alpha: &[f64],
    anchors: Var,
    trainable: bool,
) -> Result<Var> {
    if alpha.len() != views {
        return Err(Error::Shape(format!("{} view weights for {views} views", alpha.len())));
    }
    let (_, width) = g.value(features).dims2()?;
    if views == 0 || width % views != 0 {
        return Err(Error::Shape(format!("{width} features do not split into {views} views")));
    }
    let dim = width / views;
    let global = global_aggregate(g, store, INTERVIEW, features, trainable)?;
    let mut total: Option<Var> = None;
    for (v, &a) in alpha.iter().enumerate() {
        let fv = g.slice_cols(features, v * dim, dim)?;
        let w = bind(g, store, &format!("{INTERVIEW}.view{v}"), trainable)?;
        let adapted = g.matmul_t(global, w)?;
        let adapted = g.relu(adapted)?;
        let fv = g.add(fv, adapted)?;
        let cos = g.cosine(fv, anchors)?;
        let term = g.scale(cos, a)?;
        total = Some(match total {
            None => term,
            Some(t) => g.add(t, term)?,
        });
    }
    Ok(total.expect("at least one view"))
}

/// Records the logits of any head kind. `clip` is only read by the
/// dual-path head.
pub fn head_logits(
    g: &mut Graph,
    spec: &HeadSpec,
    store: &ParamStore,
    depth: Var,
    clip: Var,
    anchors: Var,
    trainable: bool,
) -> Result<Var> {
    match spec.kind {
        HeadKind::Gdpa => gdpa_logits(g, store, depth, clip, anchors, trainable),
        HeadKind::SinglePath => single_path_logits(g, store, depth, anchors, trainable),
        HeadKind::Interview => interview_logits(g, store, depth, spec.views, &spec.alpha()?, anchors, trainable),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::FeatureVec;
    use crate::losses::cross_entropy;
    use crate::numerics::{grad_check, DEFAULT_EPS};
    use crate::oracle;
    use rand::Rng;

    const V: usize = 3;
    const C: usize = 4;
    const K: usize = 5;

    fn rand_rows(rng: &mut ChaCha8Rng, n: usize, c: usize) -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..c).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
    }

    fn bank(seed: u64, k: usize, c: usize) -> AnchorBank {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let anchors = rand_rows(&mut rng, k, c)
            .into_iter()
            .map(|r| FeatureVec::normalized(r).unwrap())
            .collect();
        AnchorBank::new((0..k).map(|i| format!("c{i}")).collect(), anchors).unwrap()
    }

    fn param(store: &ParamStore, name: &str) -> Vec<f64> {
        store.value(name).unwrap().data().to_vec()
    }

    fn logits_of(spec: &HeadSpec, store: &ParamStore, depth: &Tensor, clip: &Tensor, anchors: &AnchorBank) -> Tensor {
        let mut g = Graph::new();
        let d = g.constant(depth.clone()).unwrap();
        let c = g.constant(clip.clone()).unwrap();
        let t = g.constant(anchors.to_tensor()).unwrap();
        let l = head_logits(&mut g, spec, store, d, c, t, false).unwrap();
        g.value(l).clone()
    }

    #[test]
    fn zero_shot_examples() {
        let mut rows = vec![vec![0.0; 3]; 3];
        for (i, r) in rows.iter_mut().enumerate() {
            r[i] = 1.0;
        }
        let anchors = AnchorBank::new(
            vec!["x".into(), "y".into(), "z".into()],
            rows.iter().map(|r| FeatureVec::normalized(r.clone()).unwrap()).collect(),
        )
        .unwrap();
        let f = Tensor::matrix(1, 3, vec![1.0, 0.0, 0.0]).unwrap();
        assert_eq!(zero_shot_logits(&f, &anchors).unwrap(), vec![1.0, 0.0, 0.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let views = rand_rows(&mut rng, 6, 8);
        let anchors = bank(2, K, 8);
        let once = zero_shot_logits(&Tensor::from_rows(&views).unwrap(), &anchors).unwrap();
        let twice_rows: Vec<Vec<f64>> = views.iter().chain(views.iter()).cloned().collect();
        let twice = zero_shot_logits(&Tensor::from_rows(&twice_rows).unwrap(), &anchors).unwrap();
        for (a, b) in once.iter().zip(&twice) {
            assert!((a - b).abs() < 1e-15);
        }
        let anchor_rows: Vec<Vec<f64>> = anchors.anchors().iter().map(|a| a.as_slice().to_vec()).collect();
        let direct = oracle::zero_shot_logits(&views, &anchor_rows);
        for (a, b) in once.iter().zip(&direct) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(zero_shot_logits(&Tensor::zeros(vec![0, 8]), &anchors).is_err());
        assert!(zero_shot_logits(&Tensor::zeros(vec![1, 7]), &anchors).is_err());
    }

    #[test]
    fn probabilities_and_argmax() {
        let p = softmax(&[0.0, 0.0, 0.0]);
        assert!(p.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
        assert_eq!(argmax(&[0.1, 0.5, 0.5, -1.0]), 1);
    }

    #[test]
    fn aggregator_can_average_views() {
        // f1 = identity on the concatenation, f2 = block averaging matrix.
        let mut store = ParamStore::new();
        let vc = V * C;
        let mut eye = vec![0.0; vc * vc];
        for i in 0..vc {
            eye[i * vc + i] = 1.0;
        }
        let mut avg = vec![0.0; vc * C];
        for v in 0..V {
            for c in 0..C {
                avg[(v * C + c) * C + c] = 1.0 / V as f64;
            }
        }
        store.insert("agg.f1.weight", Tensor::matrix(vc, vc, eye).unwrap()).unwrap();
        store.insert("agg.f1.bias", Tensor::zeros(vec![1, vc])).unwrap();
        store.insert("agg.f2.weight", Tensor::matrix(vc, C, avg).unwrap()).unwrap();
        store.insert("agg.f2.bias", Tensor::zeros(vec![1, C])).unwrap();

        // Non-negative features pass the ReLU untouched.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let views: Vec<Vec<f64>> = (0..V).map(|_| (0..C).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
        let mut g = Graph::new();
        let x = g.constant(Tensor::matrix(1, vc, views.concat()).unwrap()).unwrap();
        let out = global_aggregate(&mut g, &store, "agg", x, false).unwrap();
        for c in 0..C {
            let mean = views.iter().map(|v| v[c]).sum::<f64>() / V as f64;
            assert!((g.value(out).data()[c] - mean).abs() < 1e-15);
        }
    }

    #[test]
    fn aggregator_zero_input_and_order_sensitivity() {
        let spec = HeadSpec::new(HeadKind::SinglePath, V, C);
        let mut store = init_head(&spec, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for name in ["head.depth.f1.bias", "head.depth.f2.bias"] {
            let n = store.value(name).unwrap().len();
            let t = Tensor::matrix(1, n, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            store.set_value(name, t).unwrap();
        }
        let mut g = Graph::new();
        let zero = g.constant(Tensor::zeros(vec![1, V * C])).unwrap();
        let out = global_aggregate(&mut g, &store, DEPTH_PATH, zero, false).unwrap();
        let h: Vec<f64> = param(&store, "head.depth.f1.bias").into_iter().map(|x| x.max(0.0)).collect();
        let want = oracle::linear(&h, &param(&store, "head.depth.f2.weight"), &param(&store, "head.depth.f2.bias"));
        for (a, b) in g.value(out).data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-14);
        }

        let views = rand_rows(&mut rng, V, C);
        let mut swapped = views.clone();
        swapped.swap(0, 2);
        let a = g.constant(Tensor::matrix(1, V * C, views.concat()).unwrap()).unwrap();
        let b = g.constant(Tensor::matrix(1, V * C, swapped.concat()).unwrap()).unwrap();
        let ga = global_aggregate(&mut g, &store, DEPTH_PATH, a, false).unwrap();
        let gb = global_aggregate(&mut g, &store, DEPTH_PATH, b, false).unwrap();
        assert_ne!(g.value(ga), g.value(gb));

        let wrong = g.constant(Tensor::zeros(vec![1, (V + 1) * C])).unwrap();
        assert!(matches!(global_aggregate(&mut g, &store, DEPTH_PATH, wrong, false), Err(Error::Shape(_))));
    }

    #[test]
    fn gate_zero_collapses_to_single_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let depth = Tensor::from_rows(&rand_rows(&mut rng, 7, V * C)).unwrap();
        let clip = Tensor::from_rows(&rand_rows(&mut rng, 7, V * C)).unwrap();
        let anchors = bank(7, K, C);

        let mut gdpa = HeadSpec::new(HeadKind::Gdpa, V, C);
        gdpa.gate_init = 0.0;
        let dual = init_head(&gdpa, 11).unwrap();
        let single_spec = HeadSpec::new(HeadKind::SinglePath, V, C);
        let single = init_head(&single_spec, 11).unwrap();
        assert!(dual.subset(DEPTH_PATH).same_values(&single));

        let a = logits_of(&gdpa, &dual, &depth, &clip, &anchors);
        let b = logits_of(&single_spec, &single, &depth, &clip, &anchors);
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn gate_one_with_zero_depth_path_reads_clip_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let depth = Tensor::from_rows(&rand_rows(&mut rng, 3, V * C)).unwrap();
        let clip = Tensor::from_rows(&rand_rows(&mut rng, 3, V * C)).unwrap();
        let anchors = bank(13, K, C);
        let mut spec = HeadSpec::new(HeadKind::Gdpa, V, C);
        spec.gate_init = 1.0;
        let mut store = init_head(&spec, 2).unwrap();
        for name in ["head.depth.f2.weight", "head.depth.f2.bias"] {
            let shape = store.value(name).unwrap().shape().to_vec();
            store.set_value(name, Tensor::zeros(shape)).unwrap();
        }
        let got = logits_of(&spec, &store, &depth, &clip, &anchors);

        let w = |n: &str| param(&store, n);
        for b in 0..3 {
            let views: Vec<Vec<f64>> = clip.row(b).chunks(C).map(<[f64]>::to_vec).collect();
            let gc = oracle::aggregate(&views, &w("head.clip.f1.weight"), &w("head.clip.f1.bias"), &w("head.clip.f2.weight"), &w("head.clip.f2.bias"));
            for (k, t) in anchors.anchors().iter().enumerate() {
                assert!((got.row(b)[k] - oracle::cosine(&gc, t.as_slice())).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn interview_matches_direct_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let feats = rand_rows(&mut rng, 4, V * C);
        let anchors = bank(22, K, C);
        let mut spec = HeadSpec::new(HeadKind::Interview, V, C);
        spec.alpha = Some(vec![0.2, 0.5, 0.3]);
        let store = init_head(&spec, 5).unwrap();
        let got = logits_of(&spec, &store, &Tensor::from_rows(&feats).unwrap(), &Tensor::from_rows(&feats).unwrap(), &anchors);

        let w = |n: &str| param(&store, n);
        let wv: Vec<Vec<f64>> = (0..V).map(|v| w(&format!("head.inter.view{v}"))).collect();
        let anchor_rows: Vec<Vec<f64>> = anchors.anchors().iter().map(|a| a.as_slice().to_vec()).collect();
        for (b, row) in feats.iter().enumerate() {
            let views: Vec<Vec<f64>> = row.chunks(C).map(<[f64]>::to_vec).collect();
            let want = oracle::interview_logits(
                &views,
                &w("head.inter.f1.weight"),
                &w("head.inter.f1.bias"),
                &w("head.inter.f2.weight"),
                &w("head.inter.f2.bias"),
                &wv,
                &[0.2, 0.5, 0.3],
                &anchor_rows,
            );
            for k in 0..K {
                assert!((got.row(b)[k] - want[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn interview_with_zero_transforms_is_weighted_cosine() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let feats = rand_rows(&mut rng, 2, V * C);
        let anchors = bank(32, K, C);
        let mut spec = HeadSpec::new(HeadKind::Interview, V, C);
        let alpha = vec![0.6, 0.1, 0.3];
        spec.alpha = Some(alpha.clone());
        let mut store = init_head(&spec, 5).unwrap();
        for v in 0..V {
            store.set_value(&format!("head.inter.view{v}"), Tensor::zeros(vec![C, C])).unwrap();
        }
        let t = Tensor::from_rows(&feats).unwrap();
        let got = logits_of(&spec, &store, &t, &t, &anchors);
        for (b, row) in feats.iter().enumerate() {
            for (k, a) in anchors.anchors().iter().enumerate() {
                let want: f64 = row
                    .chunks(C)
                    .zip(&alpha)
                    .map(|(f, w)| w * oracle::cosine(f, a.as_slice()))
                    .sum();
                assert!((got.row(b)[k] - want).abs() < 1e-12);
            }
        }
    }

    fn ce_grad_check(kind: HeadKind) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let depth = Tensor::from_rows(&rand_rows(&mut rng, 6, V * C)).unwrap();
        let clip = Tensor::from_rows(&rand_rows(&mut rng, 6, V * C)).unwrap();
        let labels = [0, 1, 2, 3, 4, 1];
        let anchors = bank(42, K, C).to_tensor();
        let spec = HeadSpec::new(kind, V, C);
        let mut store = init_head(&spec, 43).unwrap();
        // Nonzero biases exercise every gradient path.
        let names: Vec<String> = store.names().filter(|n| n.ends_with(".bias")).map(str::to_string).collect();
        for n in names {
            let len = store.value(&n).unwrap().len();
            let t = Tensor::matrix(1, len, (0..len).map(|_| rng.random_range(-0.3..0.3)).collect()).unwrap();
            store.set_value(&n, t).unwrap();
        }
        grad_check(&store, DEFAULT_EPS, |g, s| {
            let d = g.constant(depth.clone())?;
            let c = g.constant(clip.clone())?;
            let t = g.constant(anchors.clone())?;
            let l = head_logits(g, &spec, s, d, c, t, true)?;
            cross_entropy(g, l, &labels)
        })
        .unwrap()
    }

    #[test]
    fn head_gradients_check() {
        for kind in [HeadKind::Gdpa, HeadKind::SinglePath, HeadKind::Interview] {
            let err = ce_grad_check(kind);
            assert!(err < 1e-4, "{kind}: {err}");
        }
    }

    #[test]
    fn gate_derivative_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let depth = Tensor::from_rows(&rand_rows(&mut rng, 1, V * C)).unwrap();
        let clip = Tensor::from_rows(&rand_rows(&mut rng, 1, V * C)).unwrap();
        let anchors = bank(52, K, C).to_tensor();
        let spec = HeadSpec::new(HeadKind::Gdpa, V, C);
        let store = init_head(&spec, 53).unwrap();
        for k in 0..K {
            let gate_only = store.subset(GATE_PARAM);
            let err = crate::numerics::grad_check(&gate_only, DEFAULT_EPS, |g, s| {
                let d = g.constant(depth.clone())?;
                let c = g.constant(clip.clone())?;
                let t = g.constant(anchors.clone())?;
                let mut merged = store.clone();
                merged.set_value(GATE_PARAM, s.value(GATE_PARAM)?.clone())?;
                let gd = global_aggregate(g, &merged, DEPTH_PATH, d, false)?;
                let gc = global_aggregate(g, &merged, CLIP_PATH, c, false)?;
                let gate = g.param(s, GATE_PARAM)?;
                let gated = g.mul_scalar(gc, gate)?;
                let fused = g.add(gated, gd)?;
                let cos = g.cosine(fused, t)?;
                g.slice_cols(cos, k, 1)
            })
            .unwrap();
            assert!(err < 1e-6, "{err}");
        }
    }
}
