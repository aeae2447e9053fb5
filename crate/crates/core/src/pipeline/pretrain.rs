//! Contrastive pre-training of the depth encoder against the frozen proxy.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoders::{depth_input, encoder_forward, init_encoder, EncoderSpec, DEPTH_PREFIX, PROXY_PREFIX};
use crate::error::{Error, Result};
use crate::losses::{cross_loss, intra_loss, total_loss, LossBalance, BALANCE_PARAM, DEFAULT_TAU};
use crate::numerics::{Graph, ParamStore, SgdMomentum, Tensor};
use crate::pipeline::dataset::ToyDataset;
use crate::pipeline::Modalities;
use crate::render::render;
use crate::views::{jitter_distance, CameraView, ViewSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossSchedule {
    /// One backward pass through the balanced sum.
    #[default]
    Joint,
    /// An update on the balanced intra term, then one on the cross term.
    Alternating,
}

impl std::str::FromStr for LossSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(LossSchedule::Joint),
            "alternating" => Ok(LossSchedule::Alternating),
            other => Err(Error::InvalidInput(format!("unknown loss schedule '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    pub loss_schedule: LossSchedule,
    pub tau: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 32,
            learning_rate: 0.05,
            momentum: 0.9,
            seed: 0,
            loss_schedule: LossSchedule::Joint,
            tau: DEFAULT_TAU,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::InvalidInput(format!(
                "batch_size must be at least 2 for contrastive training, got {}",
                self.batch_size
            )));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidInput("learning_rate must be finite and non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidInput("momentum must lie in [0, 1)".into()));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidInput("tau must be positive".into()));
        }
        Ok(())
    }
}

/// One optimizer step of the loss history. `sigma` is the balance that
/// produced `total`, i.e. its value before the update.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: u64,
    pub intra: f64,
    pub cross: f64,
    pub sigma: f64,
    pub total: f64,
}

pub const HISTORY_HEADER: &str = "step,L_intra,L_cross,sigma,total";

/// CSV with shortest round-trip float formatting.
pub fn history_csv(history: &[StepRecord]) -> String {
    let mut out = String::from(HISTORY_HEADER);
    out.push('\n');
    for r in history {
        out.push_str(&format!("{},{},{},{},{}\n", r.step, r.intra, r.cross, r.sigma, r.total));
    }
    out
}

/// Depth encoder, frozen proxy and the balance, each drawn from its own
/// stream derived from `seed`.
pub fn init_pretrain_store(spec: &EncoderSpec, seed: u64) -> Result<ParamStore> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let depth_seed: u64 = rng.random();
    let proxy_seed: u64 = rng.random();
    let mut store = init_encoder(spec, DEPTH_PREFIX, depth_seed)?;
    store.merge(init_encoder(spec, PROXY_PREFIX, proxy_seed)?)?;
    LossBalance::default().insert_into(&mut store)?;
    Ok(store)
}

/// Encoder inputs of one contrastive batch: rows of the two jittered
/// sparse renders and of the dense proxy render.
#[derive(Clone, Debug)]
pub struct BatchInputs {
    pub d1: Tensor,
    pub d2: Tensor,
    pub image: Tensor,
}

/// Draws a view and two jittered distances per sample from `rng` in
/// sample order, then renders in parallel.
pub fn contrastive_inputs(
    dataset: &ToyDataset,
    indices: &[usize],
    views: &ViewSet,
    modalities: &Modalities,
    rng: &mut ChaCha8Rng,
) -> Result<BatchInputs> {
    if views.is_empty() {
        return Err(Error::InvalidInput("pre-training needs at least one view".into()));
    }
    let draws: Vec<(usize, CameraView, CameraView, CameraView)> = indices
        .iter()
        .map(|&i| {
            let view = views.views()[rng.random_range(0..views.len())];
            let (v1, v2) = jitter_distance(&view, rng);
            (i, view, v1, v2)
        })
        .collect();
    let spec = &modalities.encoder;
    let rows: Vec<[Vec<f64>; 3]> = draws
        .par_iter()
        .map(|(i, view, v1, v2)| {
            let cloud = &dataset.samples[*i].cloud;
            Ok([
                depth_input(&render(cloud, v1, &modalities.sparse)?, spec)?,
                depth_input(&render(cloud, v2, &modalities.sparse)?, spec)?,
                depth_input(&render(cloud, view, &modalities.dense)?, spec)?,
            ])
        })
        .collect::<Result<_>>()?;
    let n = rows.len();
    let dim = spec.input_dim();
    let column = |k: usize| Tensor::matrix(n, dim, rows.iter().flat_map(|r| r[k].iter().copied()).collect());
    Ok(BatchInputs {
        d1: column(0)?,
        d2: column(1)?,
        image: column(2)?,
    })
}

/// Losses of one batch under `store`, without touching it.
pub fn batch_losses(store: &ParamStore, inputs: &BatchInputs, tau: f64) -> Result<StepRecord> {
    let mut g = Graph::new();
    let (intra, cross, total) = record_losses(&mut g, store, inputs, tau, false)?;
    Ok(StepRecord {
        step: store.step(),
        intra: g.scalar(intra)?,
        cross: g.scalar(cross)?,
        sigma: LossBalance::from_store(store)?.sigma,
        total: g.scalar(total)?,
    })
}

fn record_losses(
    g: &mut Graph,
    store: &ParamStore,
    inputs: &BatchInputs,
    tau: f64,
    trainable: bool,
) -> Result<(crate::numerics::Var, crate::numerics::Var, crate::numerics::Var)> {
    let x1 = g.constant(inputs.d1.clone())?;
    let x2 = g.constant(inputs.d2.clone())?;
    let xi = g.constant(inputs.image.clone())?;
    let f1 = encoder_forward(g, store, DEPTH_PREFIX, x1, trainable)?;
    let f2 = encoder_forward(g, store, DEPTH_PREFIX, x2, trainable)?;
    let fi = encoder_forward(g, store, PROXY_PREFIX, xi, false)?;
    let intra = intra_loss(g, f1, f2, tau)?;
    let cross = cross_loss(g, f1, f2, fi, tau)?;
    let log_sigma = if trainable {
        g.param(store, BALANCE_PARAM)?
    } else {
        g.frozen(store, BALANCE_PARAM)?
    };
    let total = total_loss(g, intra, cross, log_sigma)?;
    Ok((intra, cross, total))
}

/// One optimizer update (two under the alternating schedule) on a batch.
pub fn train_step(
    store: &mut ParamStore,
    opt: &mut SgdMomentum,
    inputs: &BatchInputs,
    cfg: &TrainConfig,
) -> Result<StepRecord> {
    let step = store.step();
    let sigma = LossBalance::from_store(store)?.sigma;
    match cfg.loss_schedule {
        LossSchedule::Joint => {
            let mut g = Graph::new();
            let (intra, cross, total) = record_losses(&mut g, store, inputs, cfg.tau, true)?;
            let record = StepRecord {
                step,
                intra: g.scalar(intra)?,
                cross: g.scalar(cross)?,
                sigma,
                total: g.scalar(total)?,
            };
            g.backward_into(total, store)?;
            opt.step(store)?;
            Ok(record)
        }
        LossSchedule::Alternating => {
            let mut g = Graph::new();
            let x1 = g.constant(inputs.d1.clone())?;
            let x2 = g.constant(inputs.d2.clone())?;
            let f1 = encoder_forward(&mut g, store, DEPTH_PREFIX, x1, true)?;
            let f2 = encoder_forward(&mut g, store, DEPTH_PREFIX, x2, true)?;
            let intra = intra_loss(&mut g, f1, f2, cfg.tau)?;
            let zero = g.constant(Tensor::scalar(0.0))?;
            let log_sigma = g.param(store, BALANCE_PARAM)?;
            let balanced = total_loss(&mut g, intra, zero, log_sigma)?;
            let intra_value = g.scalar(intra)?;
            let balanced_value = g.scalar(balanced)?;
            g.backward_into(balanced, store)?;
            opt.step(store)?;

            let mut g = Graph::new();
            let x1 = g.constant(inputs.d1.clone())?;
            let x2 = g.constant(inputs.d2.clone())?;
            let xi = g.constant(inputs.image.clone())?;
            let f1 = encoder_forward(&mut g, store, DEPTH_PREFIX, x1, true)?;
            let f2 = encoder_forward(&mut g, store, DEPTH_PREFIX, x2, true)?;
            let fi = encoder_forward(&mut g, store, PROXY_PREFIX, xi, false)?;
            let cross = cross_loss(&mut g, f1, f2, fi, cfg.tau)?;
            let cross_value = g.scalar(cross)?;
            g.backward_into(cross, store)?;
            opt.step(store)?;
            Ok(StepRecord {
                step,
                intra: intra_value,
                cross: cross_value,
                sigma,
                total: balanced_value + cross_value,
            })
        }
    }
}

/// Batches of one epoch: a seeded shuffle of the training split cut into
/// `batch_size` chunks; a trailing chunk of one sample is dropped.
pub fn epoch_batches(train: &[usize], batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order = train.to_vec();
    order.shuffle(rng);
    order
        .chunks(batch_size)
        .filter(|c| c.len() >= 2)
        .map(<[usize]>::to_vec)
        .collect()
}

#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    pub store: ParamStore,
    pub history: Vec<StepRecord>,
}

/// Trains the depth encoder and the balance in `store`; the proxy entries
/// are never written.
pub fn pretrain(
    dataset: &ToyDataset,
    views: &ViewSet,
    modalities: &Modalities,
    cfg: &TrainConfig,
    store: ParamStore,
    mut on_step: impl FnMut(&StepRecord),
) -> Result<PretrainOutcome> {
    cfg.validate()?;
    modalities.validate()?;
    let mut store = store;
    let mut opt = SgdMomentum::new(cfg.learning_rate, cfg.momentum);
    let proxy: Vec<String> = store.names().filter(|n| n.starts_with(PROXY_PREFIX)).map(str::to_string).collect();
    for name in proxy {
        opt.freeze(name);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = Vec::new();
    for _ in 0..cfg.epochs {
        for batch in epoch_batches(&dataset.train, cfg.batch_size, &mut rng) {
            let inputs = contrastive_inputs(dataset, &batch, views, modalities, &mut rng)?;
            let record = train_step(&mut store, &mut opt, &inputs, cfg)?;
            on_step(&record);
            history.push(record);
        }
    }
    Ok(PretrainOutcome { store, history })
}

/// Mean cosine between the depth features of two jittered renders, over
/// `indices` with view draws from a stream seeded by `seed`.
pub fn mean_pair_cosine(
    dataset: &ToyDataset,
    indices: &[usize],
    store: &ParamStore,
    views: &ViewSet,
    modalities: &Modalities,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs = contrastive_inputs(dataset, indices, views, modalities, &mut rng)?;
    let f1 = crate::encoders::encode_inputs(&inputs.d1, store, DEPTH_PREFIX)?;
    let f2 = crate::encoders::encode_inputs(&inputs.d2, store, DEPTH_PREFIX)?;
    let total: f64 = f1
        .rows()
        .zip(f2.rows())
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>())
        .sum();
    Ok(total / indices.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::tests::tiny;
    use crate::views::spherical_views;

    fn cfg(epochs: usize, lr: f64) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 6,
            learning_rate: lr,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn rejects_single_sample_batches() {
        let (data, m) = tiny();
        let store = init_pretrain_store(&m.encoder, 0).unwrap();
        let c = TrainConfig { batch_size: 1, ..cfg(1, 0.1) };
        assert!(pretrain(&data, &spherical_views(), &m, &c, store, |_| {}).is_err());
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let (data, m) = tiny();
        let store = init_pretrain_store(&m.encoder, 0).unwrap();
        let mut c = cfg(1, 0.0);
        c.batch_size = data.train.len();
        let out = pretrain(&data, &spherical_views(), &m, &c, store.clone(), |_| {}).unwrap();
        assert_eq!(out.history.len(), 1);
        assert!(out.store.same_values(&store));

        // Replaying the first batch draw reproduces the recorded losses.
        let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
        let batch = epoch_batches(&data.train, c.batch_size, &mut rng).remove(0);
        let inputs = contrastive_inputs(&data, &batch, &spherical_views(), &m, &mut rng).unwrap();
        let fresh = batch_losses(&store, &inputs, c.tau).unwrap();
        assert_eq!(fresh, out.history[0]);
    }

    #[test]
    fn zero_epochs_return_the_initialization() {
        let (data, m) = tiny();
        let store = init_pretrain_store(&m.encoder, 3).unwrap();
        let out = pretrain(&data, &spherical_views(), &m, &cfg(0, 0.1), store.clone(), |_| {}).unwrap();
        assert!(out.history.is_empty());
        assert!(out.store.same_values(&store));
    }

    #[test]
    fn proxy_is_untouched_and_runs_repeat() {
        let (data, m) = tiny();
        let store = init_pretrain_store(&m.encoder, 5).unwrap();
        for schedule in [LossSchedule::Joint, LossSchedule::Alternating] {
            let c = TrainConfig { loss_schedule: schedule, ..cfg(3, 0.05) };
            let a = pretrain(&data, &spherical_views(), &m, &c, store.clone(), |_| {}).unwrap();
            let b = pretrain(&data, &spherical_views(), &m, &c, store.clone(), |_| {}).unwrap();
            assert_eq!(history_csv(&a.history), history_csv(&b.history));
            assert!(a.store.same_values(&b.store));
            assert!(a.store.subset(PROXY_PREFIX).same_values(&store.subset(PROXY_PREFIX)));
            assert!(!a.store.subset(DEPTH_PREFIX).same_values(&store.subset(DEPTH_PREFIX)));
            assert_ne!(a.store.value(BALANCE_PARAM).unwrap(), store.value(BALANCE_PARAM).unwrap());
            let steps_per_epoch = 18usize.div_ceil(6) as u64;
            let per_record = if schedule == LossSchedule::Joint { 1 } else { 2 };
            assert_eq!(a.store.step(), 3 * steps_per_epoch * per_record);
        }
    }

    #[test]
    fn history_records_balanced_total() {
        let (data, m) = tiny();
        let store = init_pretrain_store(&m.encoder, 2).unwrap();
        let out = pretrain(&data, &spherical_views(), &m, &cfg(2, 0.05), store, |_| {}).unwrap();
        for r in &out.history {
            let want = crate::losses::total_loss_value(r.intra, r.cross, LossBalance { sigma: r.sigma }).unwrap();
            assert!((r.total - want).abs() < 1e-12);
        }
        let csv = history_csv(&out.history);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(HISTORY_HEADER));
        assert_eq!(lines.count(), out.history.len());
        assert_eq!(out.history[0].sigma, 1.0);
    }

    #[test]
    fn batches_drop_only_singletons() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = epoch_batches(&(0..13).collect::<Vec<_>>(), 4, &mut rng);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 4]);
        let b = epoch_batches(&(0..14).collect::<Vec<_>>(), 4, &mut rng);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 4, 2]);
        let mut all: Vec<usize> = b.concat();
        all.sort();
        assert_eq!(all, (0..14).collect::<Vec<_>>());
    }

    #[test]
    fn store_layout() {
        let spec = EncoderSpec::default();
        let s = init_pretrain_store(&spec, 0).unwrap();
        assert_eq!(s.len(), 13);
        assert_eq!(s.value(BALANCE_PARAM).unwrap().item().unwrap(), 0.0);
        // Independent draws: the two towers differ.
        assert_ne!(s.value("depth.fc1.weight").unwrap(), s.value("proxy.fc1.weight").unwrap());
    }
}
