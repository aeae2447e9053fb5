use std::path::Path;

use depthclip::pipeline::{eval_zero_shot, history_csv, pretrain as run_pretrain, train_head, StepRecord};
use serde_json::json;

use crate::config::Config;
use crate::error::CliError;
use crate::model::{self, Model};
use crate::report::{create_dir, metrics, print_table, write_json};

pub const CHECKPOINT_FILE: &str = "checkpoint.c2pt";
pub const HISTORY_FILE: &str = "history.csv";
pub const SUMMARY_FILE: &str = "pretrain.json";

fn mean(records: &[StepRecord], f: impl Fn(&StepRecord) -> f64) -> f64 {
    records.iter().map(f).sum::<f64>() / records.len() as f64
}

pub fn pretrain(config: &Config, out: &Path) -> Result<(), CliError> {
    let data = model::dataset(config)?;
    let init = model::load(config, None, &data)?;
    let views = config.views.set(config.views.pretrain);
    let (n, b) = (data.train.len(), config.train.batch_size);
    // A trailing batch of one sample is dropped.
    let steps_per_epoch = n / b + usize::from(n % b >= 2);
    let mut epoch = Vec::new();
    let mut epochs_done = 0;
    let outcome = run_pretrain(&data, &views, &config.modalities(), &config.train, init.store, |r| {
        epoch.push(*r);
        if epoch.len() == steps_per_epoch {
            epochs_done += 1;
            eprintln!(
                "epoch {:>3}  L_intra {:.4}  L_cross {:.4}  sigma {:.4}  total {:.4}",
                epochs_done,
                mean(&epoch, |r| r.intra),
                mean(&epoch, |r| r.cross),
                r.sigma,
                mean(&epoch, |r| r.total)
            );
            epoch.clear();
        }
    })?;

    create_dir(out)?;
    let trained = Model {
        store: outcome.store,
        anchors: init.anchors,
    };
    model::save(&trained, &out.join(CHECKPOINT_FILE))?;
    std::fs::write(out.join(HISTORY_FILE), history_csv(&outcome.history))
        .map_err(|e| CliError::config(format!("cannot write history: {e}")))?;
    let last = outcome.history.last();
    write_json(
        &out.join(SUMMARY_FILE),
        &json!({
            "steps": outcome.history.len(),
            "final": last,
            "checkpoint": CHECKPOINT_FILE,
            "history": HISTORY_FILE,
            "config_echo": config.echo(),
        }),
    )?;
    println!(
        "{} steps; checkpoint and history written to {}",
        outcome.history.len(),
        out.display()
    );
    Ok(())
}

pub fn zeroshot(config: &Config, checkpoint: &str, out: &Path) -> Result<(), CliError> {
    let stored = model::read(checkpoint)?;
    let data = model::dataset(config)?;
    let m = model::load(config, stored, &data)?;
    let views = config.views.set(config.views.zeroshot);
    let report = eval_zero_shot(&data, &data.test, &m.store, views.views(), &m.anchors, &config.modalities())?;
    print_table(&format!("zero-shot, {} views", views.len()), &report);
    let doc = metrics(
        &report,
        config.echo(),
        json!({ "command": "zeroshot", "checkpoint": checkpoint }),
    );
    write_json(out, &doc)
}

pub fn fewshot(config: &Config, checkpoint: &str, out: &Path) -> Result<(), CliError> {
    let stored = model::read(checkpoint)?;
    let data = model::dataset(config)?;
    let m = model::load(config, stored, &data)?;
    let views = config.views.set(config.views.head);
    let outcome = train_head(&data, &m.store, views.views(), &m.anchors, &config.modalities(), &config.head)?;
    print_table(
        &format!("{} head, k = {}, {} views", config.head.head, config.head.k_shot, views.len()),
        &outcome.report,
    );
    let doc = metrics(
        &outcome.report,
        config.echo(),
        json!({
            "command": "fewshot",
            "checkpoint": checkpoint,
            "initial_accuracy": outcome.initial_accuracy,
            "final_train_loss": outcome.losses.last(),
        }),
    );
    write_json(out, &doc)
}
