//! Supervised head training on frozen encoder features.

use serde::{Deserialize, Serialize};

use crate::adapters::{argmax, head_logits, init_head, HeadKind, HeadSpec, DEFAULT_GATE_INIT, GATE_PARAM};
use crate::encoders::AnchorBank;
use crate::error::{Error, Result};
use crate::losses::cross_entropy;
use crate::numerics::{Graph, ParamStore, SgdMomentum, Tensor};
use crate::pipeline::dataset::ToyDataset;
use crate::pipeline::eval::{path_features, report, EvalReport, PathFeatures};
use crate::pipeline::Modalities;
use crate::views::CameraView;

/// Training-set size: the first `k` samples per class, or the whole split.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KShot {
    Count(usize),
    Full,
}

impl std::str::FromStr for KShot {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "full" {
            return Ok(KShot::Full);
        }
        s.parse()
            .map(KShot::Count)
            .map_err(|_| Error::InvalidInput(format!("k must be a count or 'full', got '{s}'")))
    }
}

impl std::fmt::Display for KShot {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            KShot::Count(k) => write!(f, "{k}"),
            KShot::Full => f.write_str("full"),
        }
    }
}

impl Serialize for KShot {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            KShot::Count(k) => s.serialize_u64(*k as u64),
            KShot::Full => s.serialize_str("full"),
        }
    }
}

impl<'de> Deserialize<'de> for KShot {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Count(u64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Count(k) => Ok(KShot::Count(k as usize)),
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeadConfig {
    pub head: HeadKind,
    pub k_shot: KShot,
    /// Full-batch optimizer steps.
    pub steps: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    pub gate_init: f64,
    /// Keeps the gate at `gate_init` during training.
    pub freeze_gate: bool,
    /// Multiplies the cosine logits inside the training loss only;
    /// predictions are unaffected.
    pub logit_scale: f64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            head: HeadKind::Gdpa,
            k_shot: KShot::Count(16),
            steps: 200,
            learning_rate: 0.05,
            momentum: 0.9,
            seed: 0,
            gate_init: DEFAULT_GATE_INIT,
            freeze_gate: false,
            logit_scale: 10.0,
        }
    }
}

impl HeadConfig {
    pub fn validate(&self) -> Result<()> {
        if let KShot::Count(0) = self.k_shot {
            return Err(Error::InvalidInput("k must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidInput("learning_rate must be finite and non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidInput("momentum must lie in [0, 1)".into()));
        }
        if !(self.logit_scale > 0.0 && self.logit_scale.is_finite()) {
            return Err(Error::InvalidInput("logit_scale must be positive".into()));
        }
        if !self.gate_init.is_finite() {
            return Err(Error::InvalidInput("gate_init must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct HeadOutcome {
    pub params: ParamStore,
    /// Training loss before each step.
    pub losses: Vec<f64>,
    pub initial_accuracy: f64,
    pub report: EvalReport,
}

/// Argmax predictions of a head on precomputed features.
pub fn head_predictions(
    spec: &HeadSpec,
    params: &ParamStore,
    feats: &PathFeatures,
    anchors: &AnchorBank,
) -> Result<Vec<usize>> {
    let mut g = Graph::new();
    let d = g.constant(feats.depth.clone())?;
    let c = g.constant(feats.clip.clone())?;
    let t = g.constant(anchors.to_tensor())?;
    let l = head_logits(&mut g, spec, params, d, c, t, false)?;
    Ok(g.value(l).rows().map(argmax).collect())
}

fn accuracy(preds: &[usize], labels: &[usize]) -> f64 {
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    hits as f64 / labels.len() as f64
}

/// Trains a fresh head on `train` features and scores it on `test`.
pub fn fit_head(
    train: &PathFeatures,
    test: &PathFeatures,
    views: usize,
    anchors: &AnchorBank,
    class_names: &[String],
    cfg: &HeadConfig,
) -> Result<HeadOutcome> {
    cfg.validate()?;
    let (_, width) = train.depth.dims2()?;
    if views == 0 || width != views * anchors.dim() {
        return Err(Error::Shape(format!(
            "{width} features per sample do not match {views} views of dim {}",
            anchors.dim()
        )));
    }
    let mut spec = HeadSpec::new(cfg.head, views, anchors.dim());
    spec.gate_init = cfg.gate_init;
    let mut params = init_head(&spec, cfg.seed)?;
    let initial_accuracy = accuracy(&head_predictions(&spec, &params, test, anchors)?, &test.labels);

    let mut opt = SgdMomentum::new(cfg.learning_rate, cfg.momentum);
    if cfg.freeze_gate {
        opt.freeze(GATE_PARAM);
    }
    let anchor_t: Tensor = anchors.to_tensor();
    let mut losses = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let mut g = Graph::new();
        let d = g.constant(train.depth.clone())?;
        let c = g.constant(train.clip.clone())?;
        let t = g.constant(anchor_t.clone())?;
        let logits = head_logits(&mut g, &spec, &params, d, c, t, true)?;
        let logits = g.scale(logits, cfg.logit_scale)?;
        let loss = cross_entropy(&mut g, logits, &train.labels)?;
        losses.push(g.backward_into(loss, &mut params)?);
        opt.step(&mut params)?;
    }
    let preds = head_predictions(&spec, &params, test, anchors)?;
    Ok(HeadOutcome {
        params,
        losses,
        initial_accuracy,
        report: report(&test.labels, &preds, class_names)?,
    })
}

/// Renders and encodes the chosen training subset and the test split with
/// frozen encoders, then fits the head.
pub fn train_head(
    dataset: &ToyDataset,
    store: &ParamStore,
    views: &[CameraView],
    anchors: &AnchorBank,
    modalities: &Modalities,
    cfg: &HeadConfig,
) -> Result<HeadOutcome> {
    cfg.validate()?;
    let train_idx = match cfg.k_shot {
        KShot::Count(k) => dataset.k_shot(k)?,
        KShot::Full => dataset.train.clone(),
    };
    let train = path_features(dataset, &train_idx, store, views, modalities)?;
    let test = path_features(dataset, &dataset.test, store, views, modalities)?;
    fit_head(&train, &test, views.len(), anchors, &dataset.class_names, cfg)
}
