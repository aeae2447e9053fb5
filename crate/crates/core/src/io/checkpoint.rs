//! Binary parameter checkpoints; every integer and float is little-endian.
//!
//! ```text
//! magic   "C2PT"
//! version u32
//! count   u64
//! entry*  name_len u64, name (UTF-8), rank u64, dims u64 * rank, values f64 * prod(dims)
//! ```
//!
//! Entries are written in name order. Gradients and the step counter are
//! not stored.

use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"C2PT";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_checkpoint(store: &ParamStore) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * store.numel());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(store.len() as u64).to_le_bytes());
    for (name, entry) in store.iter() {
        out.extend_from_slice(&(name.len() as u64).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let shape = entry.value.shape();
        out.extend_from_slice(&(shape.len() as u64).to_le_bytes());
        for &d in shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in entry.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format(format!(
                "short read: {what} needs {n} bytes at offset {}, {} left",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    /// A length that must fit in what remains when each unit takes `unit`
    /// bytes, so a corrupt count cannot trigger a huge allocation.
    fn len(&mut self, what: &str, unit: usize) -> Result<usize> {
        let n = self.u64(what)?;
        let left = (self.bytes.len() - self.pos) as u64;
        if n.saturating_mul(unit as u64) > left {
            return Err(Error::Format(format!("short read: {what} {n} exceeds the remaining {left} bytes")));
        }
        Ok(n as usize)
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ParamStore> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Format("bad magic: not a checkpoint".into()));
    }
    let version = u32::from_le_bytes(r.take(4, "version")?.try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    // Smallest possible entry: empty name, rank 0, one value.
    let count = r.len("entry count", 24)?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = r.len("name length", 1)?;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| Error::Format("entry name is not UTF-8".into()))?
            .to_string();
        let rank = r.len("rank", 8)?;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64("dimension")? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n <= (bytes.len() - r.pos) / 8)
            .ok_or_else(|| Error::Format(format!("short read: values of '{name}' exceed the file")))?;
        let data = r
            .take(8 * numel, "values")?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let value = Tensor::new(shape, data).map_err(|e| Error::Format(format!("entry '{name}': {e}")))?;
        if store.contains(&name) {
            return Err(Error::Format(format!("duplicate entry '{name}'")));
        }
        store
            .insert(name.clone(), value)
            .map_err(|e| Error::Format(format!("entry '{name}': {e}")))?;
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes after the last entry", bytes.len() - r.pos)));
    }
    Ok(store)
}

pub fn save_checkpoint(store: &ParamStore, path: &Path) -> Result<()> {
    super::write(path, &encode_checkpoint(store))
}

pub fn load_checkpoint(path: &Path) -> Result<ParamStore> {
    decode_checkpoint(&super::read(path)?)
}
