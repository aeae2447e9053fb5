//! The trainable depth encoder, the frozen image-proxy encoder and the
//! class-anchor bank.
//!
//! Both encoders share one architecture: the depth map is normalized so that
//! near surfaces are bright, average-pooled to a coarse grid, passed through
//! two ReLU layers and a linear head, and L2-normalized.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::nn::{init_linear, linear};
use crate::numerics::{Graph, ParamStore, Tensor, Var};
use crate::pipeline::dataset::Sample;
use crate::render::{render, DepthMap, RenderConfig};
use crate::views::CameraView;

/// Parameter-name prefix of the trainable depth encoder.
pub const DEPTH_PREFIX: &str = "depth";
/// Parameter-name prefix of the frozen image-proxy encoder.
pub const PROXY_PREFIX: &str = "proxy";

const DEPTH_EPS: f64 = 1e-8;

/// Small enough not to swamp the input signal, nonzero so an empty map still
/// has a defined (bias-path) feature.
const BIAS_STD: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderSpec {
    /// Side of the square depth maps the encoder accepts.
    pub resolution: usize,
    /// Side of the pooled input grid; must divide `resolution`.
    pub grid: usize,
    pub hidden: usize,
    pub out_dim: usize,
}

impl Default for EncoderSpec {
    fn default() -> Self {
        EncoderSpec {
            resolution: 224,
            grid: 14,
            hidden: 256,
            out_dim: 64,
        }
    }
}

impl EncoderSpec {
    pub fn validate(&self) -> Result<()> {
        if self.grid == 0 || !self.resolution.is_multiple_of(self.grid) {
            return Err(Error::InvalidInput(format!(
                "pool grid {} must divide resolution {}",
                self.grid, self.resolution
            )));
        }
        if self.out_dim < 2 || self.hidden == 0 {
            return Err(Error::InvalidInput("encoder needs out_dim >= 2 and hidden >= 1".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.grid * self.grid
    }

    fn pool(&self) -> usize {
        self.resolution / self.grid
    }
}

/// A unit-length embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVec(Vec<f64>);

impl FeatureVec {
    /// Normalizes `values` to unit length.
    pub fn normalized(values: Vec<f64>) -> Result<Self> {
        let n = values.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::Numerics("cannot normalize feature vector".into()));
        }
        Ok(FeatureVec(values.into_iter().map(|x| x / n).collect()))
    }

    /// Wraps values that already have unit length (within 1e-9), keeping
    /// them bit-for-bit.
    pub fn from_unit(values: Vec<f64>) -> Result<Self> {
        let n = values.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !((n - 1.0).abs() <= 1e-9) {
            return Err(Error::InvalidInput(format!("feature vector has norm {n}, expected 1")));
        }
        Ok(FeatureVec(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn dot(&self, other: &FeatureVec) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }
}

/// Fresh encoder weights under `prefix`, drawn from a stream seeded by `seed`.
pub fn init_encoder(spec: &EncoderSpec, prefix: &str, seed: u64) -> Result<ParamStore> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    init_linear(&mut store, &format!("{prefix}.fc1"), spec.input_dim(), spec.hidden, 2.0, BIAS_STD, &mut rng)?;
    init_linear(&mut store, &format!("{prefix}.fc2"), spec.hidden, spec.hidden, 2.0, BIAS_STD, &mut rng)?;
    init_linear(&mut store, &format!("{prefix}.head"), spec.hidden, spec.out_dim, 1.0, BIAS_STD, &mut rng)?;
    Ok(store)
}

/// Encoder input for one map: depths rescaled to `(z_max - z) / (z_max -
/// z_min + 1e-8)` on occupied pixels (0 elsewhere), then average-pooled to
/// a `grid x grid` vector in row-major order.
pub fn depth_input(map: &DepthMap, spec: &EncoderSpec) -> Result<Vec<f64>> {
    if map.width() != spec.resolution || map.height() != spec.resolution {
        return Err(Error::Shape(format!(
            "encoder expects {r}x{r} maps, got {}x{}",
            map.width(),
            map.height(),
            r = spec.resolution
        )));
    }
    spec.validate()?;
    let (zmin, zmax) = match map.depth_range() {
        Some(r) => r,
        None => return Ok(vec![0.0; spec.input_dim()]),
    };
    let span = zmax - zmin + DEPTH_EPS;
    let pool = spec.pool();
    let n = spec.resolution;
    let mut out = vec![0.0; spec.input_dim()];
    for y in 0..n {
        let row = (y / pool) * spec.grid;
        for x in 0..n {
            if map.is_occupied(x, y) {
                out[row + x / pool] += (zmax - map.get(x, y)) / span;
            }
        }
    }
    let area = (pool * pool) as f64;
    out.iter_mut().for_each(|v| *v /= area);
    Ok(out)
}

/// Stacks the inputs of several maps into a `[maps, grid^2]` matrix.
pub fn depth_inputs(maps: &[DepthMap], spec: &EncoderSpec) -> Result<Tensor> {
    let rows: Vec<Vec<f64>> = maps.par_iter().map(|m| depth_input(m, spec)).collect::<Result<_>>()?;
    Tensor::matrix(maps.len(), spec.input_dim(), rows.concat())
}

/// Records the encoder on `g`: `[batch, grid^2] -> [batch, out_dim]`, rows
/// L2-normalized.
pub fn encoder_forward(g: &mut Graph, store: &ParamStore, prefix: &str, input: Var, trainable: bool) -> Result<Var> {
    let h = linear(g, store, &format!("{prefix}.fc1"), input, trainable)?;
    let h = g.relu(h)?;
    let h = linear(g, store, &format!("{prefix}.fc2"), h, trainable)?;
    let h = g.relu(h)?;
    let out = linear(g, store, &format!("{prefix}.head"), h, trainable)?;
    g.l2_normalize_rows(out)
}

/// Inference-only encoding of a stacked input matrix.
pub fn encode_inputs(inputs: &Tensor, store: &ParamStore, prefix: &str) -> Result<Tensor> {
    let (rows, dim) = inputs.dims2()?;
    if rows == 0 {
        return Err(Error::InvalidInput("nothing to encode".into()));
    }
    // Rows are independent, so chunking cannot change the result.
    const CHUNK: usize = 64;
    let chunks: Vec<Tensor> = inputs
        .data()
        .par_chunks(CHUNK * dim)
        .map(|chunk| {
            let mut g = Graph::new();
            let x = g.constant(Tensor::matrix(chunk.len() / dim, dim, chunk.to_vec())?)?;
            let y = encoder_forward(&mut g, store, prefix, x, false)?;
            Ok(g.value(y).clone())
        })
        .collect::<Result<_>>()?;
    let cols = chunks[0].dims2()?.1;
    let data: Vec<f64> = chunks.into_iter().flat_map(Tensor::into_data).collect();
    Tensor::matrix(rows, cols, data)
}

/// Encodes several maps with the encoder stored under `prefix`.
pub fn encode_maps(maps: &[DepthMap], store: &ParamStore, prefix: &str, spec: &EncoderSpec) -> Result<Tensor> {
    encode_inputs(&depth_inputs(maps, spec)?, store, prefix)
}

fn encode_one(map: &DepthMap, store: &ParamStore, prefix: &str, spec: &EncoderSpec) -> Result<FeatureVec> {
    let t = encode_maps(std::slice::from_ref(map), store, prefix, spec)?;
    FeatureVec::normalized(t.into_data())
}

/// Feature of a sparse depth map under the trainable depth encoder.
pub fn encode_depth(map: &DepthMap, params: &ParamStore, spec: &EncoderSpec) -> Result<FeatureVec> {
    encode_one(map, params, DEPTH_PREFIX, spec)
}

/// Feature of a dense map under the frozen image-proxy encoder.
pub fn encode_image_proxy(map: &DepthMap, frozen: &ParamStore, spec: &EncoderSpec) -> Result<FeatureVec> {
    encode_one(map, frozen, PROXY_PREFIX, spec)
}

/// Per-class unit anchors used as classifier weights by every head.
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorBank {
    names: Vec<String>,
    anchors: Vec<FeatureVec>,
}

impl AnchorBank {
    pub fn new(names: Vec<String>, anchors: Vec<FeatureVec>) -> Result<Self> {
        if anchors.len() < 2 || names.len() != anchors.len() {
            return Err(Error::InvalidInput(format!(
                "anchor bank needs >= 2 classes with names, got {} anchors / {} names",
                anchors.len(),
                names.len()
            )));
        }
        let dim = anchors[0].dim();
        if anchors.iter().any(|a| a.dim() != dim) {
            return Err(Error::Shape("anchors have different dimensions".into()));
        }
        Ok(AnchorBank { names, anchors })
    }

    /// Rebuilds a bank from a `[K, C]` matrix of unit rows.
    pub fn from_tensor(names: Vec<String>, t: &Tensor) -> Result<Self> {
        t.dims2()?;
        let anchors = t.rows().map(|r| FeatureVec::from_unit(r.to_vec())).collect::<Result<_>>()?;
        Self::new(names, anchors)
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.anchors[0].dim()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn anchors(&self) -> &[FeatureVec] {
        &self.anchors
    }

    /// `[K, C]` matrix of anchors.
    pub fn to_tensor(&self) -> Tensor {
        let data = self.anchors.iter().flat_map(|a| a.as_slice().iter().copied()).collect();
        Tensor::matrix(self.len(), self.dim(), data).expect("consistent anchor dims")
    }

    /// Reorders classes so that new class `j` is old class `perm[j]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        Self::new(
            perm.iter().map(|&i| self.names[i].clone()).collect(),
            perm.iter().map(|&i| self.anchors[i].clone()).collect(),
        )
    }
}

/// Anchors as L2-normalized class means of proxy features over every
/// training sample and every view, rendered with `dense`.
pub fn build_anchor_bank(
    train: &[Sample],
    class_names: &[String],
    frozen: &ParamStore,
    spec: &EncoderSpec,
    views: &[CameraView],
    dense: &RenderConfig,
) -> Result<AnchorBank> {
    if views.is_empty() {
        return Err(Error::InvalidInput("anchor bank needs at least one view".into()));
    }
    let k = class_names.len();
    let mut counts = vec![0usize; k];
    for s in train {
        if s.label >= k {
            return Err(Error::InvalidInput(format!("label {} out of range", s.label)));
        }
        counts[s.label] += 1;
    }
    if let Some(c) = counts.iter().position(|&c| c == 0) {
        return Err(Error::InvalidInput(format!(
            "class '{}' has no training samples",
            class_names[c]
        )));
    }

    let per_sample: Vec<Tensor> = train
        .par_iter()
        .map(|s| {
            let maps = views
                .iter()
                .map(|v| render(&s.cloud, v, dense))
                .collect::<Result<Vec<_>>>()?;
            encode_maps(&maps, frozen, PROXY_PREFIX, spec)
        })
        .collect::<Result<_>>()?;

    let dim = spec.out_dim;
    let mut sums = vec![vec![0.0; dim]; k];
    for (s, feats) in train.iter().zip(&per_sample) {
        for row in feats.rows() {
            for (acc, v) in sums[s.label].iter_mut().zip(row) {
                *acc += v;
            }
        }
    }
    let anchors = sums.into_iter().map(FeatureVec::normalized).collect::<Result<_>>()?;
    AnchorBank::new(class_names.to_vec(), anchors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{normalize, PointCloud};
    use crate::views::{orthogonal_views, spherical_views};
    use rand::Rng;

    fn small_spec() -> EncoderSpec {
        EncoderSpec {
            resolution: 32,
            grid: 4,
            hidden: 16,
            out_dim: 8,
        }
    }

    fn small_render(rule_dense: bool) -> RenderConfig {
        let base = if rule_dense { RenderConfig::dense() } else { RenderConfig::sparse() };
        RenderConfig {
            resolution: 32,
            focal: 12.0,
            ..base
        }
    }

    fn cloud(seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = (0..300)
            .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-0.5..0.5), rng.random_range(-1.0..1.0)])
            .collect();
        normalize(&PointCloud::new("c", pts).unwrap())
    }

    #[test]
    fn depth_input_normalization() {
        let mut d = vec![0.0; 64];
        d[0] = 1.0;
        d[1] = 3.0;
        let map = DepthMap::from_depths(8, 8, d).unwrap();
        let spec = EncoderSpec {
            resolution: 8,
            grid: 4,
            hidden: 4,
            out_dim: 2,
        };
        let x = depth_input(&map, &spec).unwrap();
        // Nearest pixel maps to ~1, farthest to 0; pooled over 2x2 cells.
        assert!((x[0] - (2.0 / (2.0 + 1e-8)) / 4.0).abs() < 1e-15);
        assert!(x[1..].iter().all(|&v| v == 0.0));
        assert!(depth_input(&DepthMap::empty(16, 16), &spec).is_err());
    }

    #[test]
    fn empty_map_gives_bias_path() {
        let spec = small_spec();
        let store = init_encoder(&spec, DEPTH_PREFIX, 1).unwrap();
        let f = encode_depth(&DepthMap::empty(32, 32), &store, &spec).unwrap();
        let again = encode_depth(&DepthMap::empty(32, 32), &store, &spec).unwrap();
        assert_eq!(f, again);

        let relu = |v: Vec<f64>| v.into_iter().map(|x: f64| x.max(0.0)).collect::<Vec<_>>();
        let p = |n: &str| store.value(n).unwrap().data().to_vec();
        let h1 = relu(p("depth.fc1.bias"));
        let h2 = relu(crate::oracle::linear(&h1, &p("depth.fc2.weight"), &p("depth.fc2.bias")));
        let out = crate::oracle::linear(&h2, &p("depth.head.weight"), &p("depth.head.bias"));
        let want = FeatureVec::normalized(out).unwrap();
        for (a, b) in f.as_slice().iter().zip(want.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn outputs_are_unit_and_deterministic() {
        let spec = EncoderSpec::default();
        let store = init_encoder(&spec, DEPTH_PREFIX, 5).unwrap();
        assert_eq!(store, init_encoder(&spec, DEPTH_PREFIX, 5).unwrap());
        for seed in 0..4 {
            let map = render(&cloud(seed), &spherical_views().views()[seed as usize], &RenderConfig::default()).unwrap();
            let f = encode_depth(&map, &store, &spec).unwrap();
            let norm = f.dot(&f).sqrt();
            assert!((norm - 1.0).abs() < 1e-9);
            assert_eq!(f, encode_depth(&map, &store, &spec).unwrap());
        }
        let bad = DepthMap::empty(100, 100);
        assert!(matches!(encode_depth(&bad, &store, &spec), Err(Error::Shape(_))));
    }

    #[test]
    fn batch_encoding_matches_single() {
        let spec = small_spec();
        let store = init_encoder(&spec, PROXY_PREFIX, 2).unwrap();
        let maps: Vec<DepthMap> = (0..70)
            .map(|i| render(&cloud(i), &spherical_views().views()[(i % 10) as usize], &small_render(true)).unwrap())
            .collect();
        let batch = encode_maps(&maps, &store, PROXY_PREFIX, &spec).unwrap();
        for (i, m) in maps.iter().enumerate() {
            let one = encode_image_proxy(m, &store, &spec).unwrap();
            for (a, b) in one.as_slice().iter().zip(batch.row(i)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dense_and_sparse_renders_differ() {
        let spec = EncoderSpec::default();
        let store = init_encoder(&spec, PROXY_PREFIX, 3).unwrap();
        let c = cloud(8);
        let v = orthogonal_views().views()[0];
        let dense = encode_image_proxy(&render(&c, &v, &RenderConfig::dense()).unwrap(), &store, &spec).unwrap();
        let sparse = encode_image_proxy(&render(&c, &v, &RenderConfig::sparse()).unwrap(), &store, &spec).unwrap();
        assert!(dense.dot(&sparse) < 1.0);
    }

    #[test]
    fn tiny_input_perturbation_is_continuous() {
        let spec = EncoderSpec::default();
        let store = init_encoder(&spec, DEPTH_PREFIX, 4).unwrap();
        let map = render(&cloud(2), &orthogonal_views().views()[1], &RenderConfig::default()).unwrap();
        let x = depth_input(&map, &spec).unwrap();
        let empty = x.iter().position(|&v| v == 0.0).expect("some empty cell");
        let mut y = x.clone();
        y[empty] += 5e-7;
        let a = encode_inputs(&Tensor::matrix(1, x.len(), x).unwrap(), &store, DEPTH_PREFIX).unwrap();
        let b = encode_inputs(&Tensor::matrix(1, y.len(), y).unwrap(), &store, DEPTH_PREFIX).unwrap();
        let diff: f64 = a.data().iter().zip(b.data()).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        assert!(diff < 1e-3, "{diff}");
    }

    #[test]
    fn anchor_bank_single_sample_per_class() {
        let spec = small_spec();
        let frozen = init_encoder(&spec, PROXY_PREFIX, 9).unwrap();
        let train: Vec<Sample> = (0..2).map(|i| Sample { cloud: cloud(20 + i), label: i as usize }).collect();
        let names = vec!["a".to_string(), "b".to_string()];
        let orth = orthogonal_views();
        let front = &orth.views()[..1];
        let bank = build_anchor_bank(&train, &names, &frozen, &spec, front, &small_render(true)).unwrap();
        assert_eq!(bank.len(), 2);
        for (s, a) in train.iter().zip(bank.anchors()) {
            assert!((a.dot(a) - 1.0).abs() < 1e-12);
            let map = render(&s.cloud, &front[0], &small_render(true)).unwrap();
            let feat = encode_image_proxy(&map, &frozen, &spec).unwrap();
            for (x, y) in a.as_slice().iter().zip(feat.as_slice()) {
                assert!((x - y).abs() < 1e-12);
            }
        }

        let all = spherical_views();
        let bank = build_anchor_bank(&train, &names, &frozen, &spec, all.views(), &small_render(true)).unwrap();
        assert!(bank.anchors().iter().all(|a| (a.dot(a) - 1.0).abs() < 1e-12));

        let missing = vec![Sample { cloud: cloud(1), label: 0 }];
        assert!(build_anchor_bank(&missing, &names, &frozen, &spec, front, &small_render(true)).is_err());
    }

    #[test]
    fn anchor_tensor_round_trip_is_exact() {
        let a = FeatureVec::normalized(vec![0.3, -0.7, 0.1]).unwrap();
        let b = FeatureVec::normalized(vec![1.0, 1.0, 1.0]).unwrap();
        let bank = AnchorBank::new(vec!["a".into(), "b".into()], vec![a, b]).unwrap();
        let back = AnchorBank::from_tensor(bank.names().to_vec(), &bank.to_tensor()).unwrap();
        assert_eq!(back, bank);
        let not_unit = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 2.0]).unwrap();
        assert!(AnchorBank::from_tensor(vec!["a".into(), "b".into()], &not_unit).is_err());
    }
}
