//! Multi-view feature extraction and the zero-shot protocol.

use rayon::prelude::*;
use serde::Serialize;

use crate::adapters::{argmax, zero_shot_logits};
use crate::encoders::{build_anchor_bank, depth_input, encode_inputs, AnchorBank, DEPTH_PREFIX, PROXY_PREFIX};
use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tensor};
use crate::pipeline::dataset::ToyDataset;
use crate::pipeline::Modalities;
use crate::render::render;
use crate::views::CameraView;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub name: String,
    pub precision: f64,
    pub recall: f64,
    pub support: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub accuracy: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub per_class: Vec<ClassMetrics>,
}

/// Precision of a class never predicted, and recall of a class without
/// support, are reported as 0.
pub fn report(labels: &[usize], predictions: &[usize], class_names: &[String]) -> Result<EvalReport> {
    if labels.len() != predictions.len() || labels.is_empty() {
        return Err(Error::InvalidInput("need one prediction per label and at least one label".into()));
    }
    let k = class_names.len();
    let mut confusion = vec![vec![0usize; k]; k];
    for (&t, &p) in labels.iter().zip(predictions) {
        if t >= k || p >= k {
            return Err(Error::InvalidInput(format!("class index out of range for {k} classes")));
        }
        confusion[t][p] += 1;
    }
    let correct: usize = (0..k).map(|c| confusion[c][c]).sum();
    let per_class = (0..k)
        .map(|c| {
            let support: usize = confusion[c].iter().sum();
            let predicted: usize = confusion.iter().map(|r| r[c]).sum();
            let ratio = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
            ClassMetrics {
                name: class_names[c].clone(),
                precision: ratio(confusion[c][c], predicted),
                recall: ratio(confusion[c][c], support),
                support,
            }
        })
        .collect();
    Ok(EvalReport {
        accuracy: correct as f64 / labels.len() as f64,
        confusion,
        per_class,
    })
}

/// Sparse renders of every listed sample in every view, as encoder inputs
/// stacked sample-major: `[indices * views, grid^2]`.
pub fn multiview_inputs(
    dataset: &ToyDataset,
    indices: &[usize],
    views: &[CameraView],
    modalities: &Modalities,
) -> Result<Tensor> {
    if views.is_empty() || indices.is_empty() {
        return Err(Error::InvalidInput("need at least one sample and one view".into()));
    }
    let rows: Vec<Vec<f64>> = indices
        .par_iter()
        .flat_map_iter(|&i| {
            views.iter().map(move |v| {
                let map = render(&dataset.samples[i].cloud, v, &modalities.sparse)?;
                depth_input(&map, &modalities.encoder)
            })
        })
        .collect::<Result<_>>()?;
    Tensor::matrix(rows.len(), modalities.encoder.input_dim(), rows.concat())
}

/// Encodes stacked multi-view inputs into `[samples, views * dim]`.
pub fn multiview_features(inputs: &Tensor, views: usize, store: &ParamStore, prefix: &str) -> Result<Tensor> {
    let feats = encode_inputs(inputs, store, prefix)?;
    let (rows, dim) = feats.dims2()?;
    if views == 0 || rows % views != 0 {
        return Err(Error::Shape(format!("{rows} feature rows do not split into {views} views")));
    }
    feats.reshaped(vec![rows / views, views * dim])
}

/// Anchors from the proxy features of dense renders of the training split.
pub fn build_anchors(
    dataset: &ToyDataset,
    store: &ParamStore,
    views: &[CameraView],
    modalities: &Modalities,
) -> Result<AnchorBank> {
    build_anchor_bank(
        &dataset.train_samples(),
        &dataset.class_names,
        store,
        &modalities.encoder,
        views,
        &modalities.dense,
    )
}

/// Zero-shot predictions for `indices` from view-averaged cosine logits.
pub fn zero_shot_predictions(
    dataset: &ToyDataset,
    indices: &[usize],
    store: &ParamStore,
    views: &[CameraView],
    anchors: &AnchorBank,
    modalities: &Modalities,
) -> Result<Vec<usize>> {
    let inputs = multiview_inputs(dataset, indices, views, modalities)?;
    let feats = multiview_features(&inputs, views.len(), store, DEPTH_PREFIX)?;
    let dim = modalities.encoder.out_dim;
    feats
        .rows()
        .map(|row| {
            let per_view = Tensor::matrix(views.len(), dim, row.to_vec())?;
            Ok(argmax(&zero_shot_logits(&per_view, anchors)?))
        })
        .collect()
}

/// Zero-shot accuracy and confusion of the depth encoder on `indices`.
pub fn eval_zero_shot(
    dataset: &ToyDataset,
    indices: &[usize],
    store: &ParamStore,
    views: &[CameraView],
    anchors: &AnchorBank,
    modalities: &Modalities,
) -> Result<EvalReport> {
    let preds = zero_shot_predictions(dataset, indices, store, views, anchors, modalities)?;
    report(&dataset.labels(indices), &preds, &dataset.class_names)
}

/// Depth-path and proxy-path features of the same sparse renders.
#[derive(Clone, Debug)]
pub struct PathFeatures {
    pub depth: Tensor,
    pub clip: Tensor,
    pub labels: Vec<usize>,
}

pub fn path_features(
    dataset: &ToyDataset,
    indices: &[usize],
    store: &ParamStore,
    views: &[CameraView],
    modalities: &Modalities,
) -> Result<PathFeatures> {
    let inputs = multiview_inputs(dataset, indices, views, modalities)?;
    Ok(PathFeatures {
        depth: multiview_features(&inputs, views.len(), store, DEPTH_PREFIX)?,
        clip: multiview_features(&inputs, views.len(), store, PROXY_PREFIX)?,
        labels: dataset.labels(indices),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::pretrain::init_pretrain_store;
    use crate::pipeline::tests::tiny;
    use crate::views::orthogonal_views;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn report_counts() {
        let names: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let r = report(&[0, 0, 1, 1, 2], &[0, 1, 1, 1, 0], &names).unwrap();
        assert_eq!(r.accuracy, 0.6);
        assert_eq!(r.confusion, vec![vec![1, 1, 0], vec![0, 2, 0], vec![1, 0, 0]]);
        assert_eq!(r.per_class[0].precision, 0.5);
        assert_eq!(r.per_class[1].precision, 2.0 / 3.0);
        assert_eq!(r.per_class[1].recall, 1.0);
        assert_eq!(r.per_class[2].precision, 0.0);
        assert_eq!(r.per_class[2].support, 1);
        assert!(report(&[0], &[3], &names).is_err());
        assert!(report(&[], &[], &names).is_err());
    }

    #[test]
    fn features_are_sample_major() {
        let (data, m) = tiny();
        let store = init_pretrain_store(&m.encoder, 0).unwrap();
        let views = orthogonal_views();
        let idx = &data.test[..3];
        let feats = path_features(&data, idx, &store, views.views(), &m).unwrap();
        assert_eq!(feats.depth.shape(), &[3, 6 * m.encoder.out_dim]);
        let one = path_features(&data, &idx[1..2], &store, views.views(), &m).unwrap();
        assert_eq!(one.depth.row(0), feats.depth.row(1));
        assert_eq!(one.clip.row(0), feats.clip.row(1));
        assert_ne!(feats.depth.row(1), feats.clip.row(1));
    }

    #[test]
    fn zero_shot_is_order_and_label_symmetric() {
        let (data, m) = tiny();
        let store = init_pretrain_store(&m.encoder, 1).unwrap();
        let views = orthogonal_views();
        let anchors = build_anchors(&data, &store, views.views(), &m).unwrap();
        let base = eval_zero_shot(&data, &data.test, &store, views.views(), &anchors, &m).unwrap();

        let mut shuffled = data.test.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(3));
        let again = eval_zero_shot(&data, &shuffled, &store, views.views(), &anchors, &m).unwrap();
        assert_eq!(base.accuracy, again.accuracy);
        assert_eq!(base.confusion, again.confusion);

        // Permute anchors and relabel every sample consistently.
        let perm = [2, 0, 1];
        let permuted = anchors.permuted(&perm).unwrap();
        let mut relabeled = data.clone();
        for s in &mut relabeled.samples {
            s.label = perm.iter().position(|&p| p == s.label).unwrap();
        }
        relabeled.class_names = perm.iter().map(|&p| data.class_names[p].clone()).collect();
        let r = eval_zero_shot(&relabeled, &data.test, &store, views.views(), &permuted, &m).unwrap();
        assert_eq!(r.accuracy, base.accuracy);
    }
}
