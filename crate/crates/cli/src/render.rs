use std::path::Path;

use depthclip::io::{load_cloud, save_depth_pgm, CloudFormat};
use depthclip::{normalize, render_views, ViewKind};
use serde_json::json;

use crate::config::Config;
use crate::error::CliError;
use crate::report::{create_dir, write_json};

/// Normalizes the cloud to the unit sphere, renders every view with the
/// sparse settings and writes `view_XX.pgm` files plus `manifest.json`.
pub fn run(
    config: &Config,
    input: &Path,
    format: Option<CloudFormat>,
    views: ViewKind,
    out: &Path,
) -> Result<(), CliError> {
    let format = format.unwrap_or_else(|| CloudFormat::from_path(input));
    let cloud = normalize(&load_cloud(input, format)?);
    let set = config.views.set(views);
    let cfg = config.modalities().sparse;
    let maps = render_views(&cloud, &set, &cfg)?;
    create_dir(out)?;
    let mut entries = Vec::with_capacity(maps.len());
    for (i, (map, view)) in maps.iter().zip(set.views()).enumerate() {
        let file = format!("view_{i:02}.pgm");
        save_depth_pgm(map, &out.join(&file))?;
        entries.push(json!({
            "index": i,
            "file": file,
            "azimuth": view.azimuth,
            "elevation": view.elevation,
            "distance": view.distance,
            "occupied": map.occupied_count(),
        }));
    }
    let manifest = json!({
        "input": input.display().to_string(),
        "points": cloud.len(),
        "view_set": views.to_string(),
        "render": cfg,
        "views": entries,
        "config_echo": config.echo(),
    });
    write_json(&out.join("manifest.json"), &manifest)?;
    println!("wrote {} maps to {}", maps.len(), out.display());
    Ok(())
}
