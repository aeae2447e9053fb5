//! File formats: point clouds in, depth maps and checkpoints out.

mod checkpoint;
mod cloud;
mod pgm;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use cloud::{load_cloud, parse_cloud, CloudFormat};
pub use pgm::{decode_pgm, encode_pgm, load_depth_pgm, save_depth_pgm, PGM_MAXVAL};

use std::path::Path;

use crate::error::{Error, Result};

pub(crate) fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
