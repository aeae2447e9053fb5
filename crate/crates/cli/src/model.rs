//! Dataset construction and checkpoint handling shared by the subcommands.

use std::path::Path;

use depthclip::encoders::{AnchorBank, DEPTH_PREFIX, PROXY_PREFIX};
use depthclip::io::{load_checkpoint, save_checkpoint};
use depthclip::pipeline::{build_anchors, generate_dataset, init_pretrain_store, ToyDataset};
use depthclip::ParamStore;

use crate::config::Config;
use crate::error::CliError;

/// Checkpoint entry holding the `[classes, dim]` anchor matrix.
pub const ANCHORS_ENTRY: &str = "anchors";

pub fn dataset(config: &Config) -> Result<ToyDataset, CliError> {
    let d = &config.dataset;
    eprintln!(
        "generating {} classes x {} samples (seed {})",
        d.classes, d.per_class, config.seed
    );
    Ok(generate_dataset(config.seed, d)?)
}

pub fn anchors(config: &Config, data: &ToyDataset, store: &ParamStore) -> Result<AnchorBank, CliError> {
    let views = config.views.set(config.views.anchors);
    Ok(build_anchors(data, store, views.views(), &config.modalities())?)
}

pub struct Model {
    pub store: ParamStore,
    pub anchors: AnchorBank,
}

/// Reads `checkpoint`, or returns `None` when it is `none`.
pub fn read(checkpoint: &str) -> Result<Option<ParamStore>, CliError> {
    if checkpoint == "none" {
        return Ok(None);
    }
    let store = load_checkpoint(Path::new(checkpoint))?;
    for prefix in [DEPTH_PREFIX, PROXY_PREFIX] {
        if store.subset(prefix).is_empty() {
            return Err(CliError::config(format!("{checkpoint}: no '{prefix}' encoder entries")));
        }
    }
    Ok(Some(store))
}

/// Encoders and anchors from a checkpoint read by [`read`], or freshly
/// initialized from the seed.
pub fn load(config: &Config, checkpoint: Option<ParamStore>, data: &ToyDataset) -> Result<Model, CliError> {
    let Some(mut store) = checkpoint else {
        let store = init_pretrain_store(&config.encoder, config.seed)?;
        let anchors = anchors(config, data, &store)?;
        return Ok(Model { store, anchors });
    };
    let anchors = match store.remove(ANCHORS_ENTRY) {
        Some(t) => AnchorBank::from_tensor(data.class_names.clone(), &t)?,
        None => anchors(config, data, &store)?,
    };
    Ok(Model { store, anchors })
}

pub fn save(model: &Model, path: &Path) -> Result<(), CliError> {
    let mut store = model.store.clone();
    store.insert(ANCHORS_ENTRY, model.anchors.to_tensor())?;
    Ok(save_checkpoint(&store, path)?)
}
