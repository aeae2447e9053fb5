//! 16-bit binary PGM export of depth maps.
//!
//! Occupied depths map linearly from `[z_min, z_max]` to `[65535, 1]`
//! (near is bright), empty pixels are 0. The header carries the range as
//! `# depth-range <z_min> <z_max>` so loading recovers depths up to the
//! quantization step and a load/save cycle reproduces the file exactly.

use std::path::Path;

use crate::error::{Error, Result};
use crate::render::DepthMap;

pub const PGM_MAXVAL: u16 = 65535;
const RANGE_TAG: &str = "depth-range";

fn quantize(z: f64, zmin: f64, zmax: f64) -> u16 {
    if zmax == zmin {
        return PGM_MAXVAL;
    }
    let v = (65535.0 - (z - zmin) / (zmax - zmin) * 65534.0).round();
    v.clamp(1.0, 65535.0) as u16
}

fn dequantize(v: u16, zmin: f64, zmax: f64) -> f64 {
    match v {
        PGM_MAXVAL => zmin,
        1 => zmax,
        _ => zmin + f64::from(PGM_MAXVAL - v) / 65534.0 * (zmax - zmin),
    }
}

pub fn encode_pgm(map: &DepthMap) -> Vec<u8> {
    let (w, h) = (map.width(), map.height());
    let mut out = format!("P5\n{w} {h}\n").into_bytes();
    let range = map.depth_range();
    if let Some((lo, hi)) = range {
        out.extend_from_slice(format!("# {RANGE_TAG} {lo} {hi}\n").as_bytes());
    }
    out.extend_from_slice(format!("{PGM_MAXVAL}\n").as_bytes());
    out.reserve(2 * w * h);
    for (&z, &occ) in map.depth().iter().zip(map.occupied()) {
        let v = match (occ, range) {
            (true, Some((lo, hi))) => quantize(z, lo, hi),
            _ => 0,
        };
        out.extend_from_slice(&v.to_be_bytes());
    }
    out
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
    line: usize,
    origin: &'a Path,
    range: Option<(f64, f64)>,
}

impl Header<'_> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::parse(self.origin, self.line, message)
    }

    /// Skips whitespace and comments, remembering a depth-range comment.
    fn skip(&mut self) -> Result<()> {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                let end = self.bytes[self.pos..]
                    .iter()
                    .position(|&c| c == b'\n')
                    .map_or(self.bytes.len(), |e| self.pos + e);
                let comment = String::from_utf8_lossy(&self.bytes[self.pos + 1..end]).into_owned();
                self.parse_range(&comment)?;
                self.pos = end;
            } else if b.is_ascii_whitespace() {
                if b == b'\n' {
                    self.line += 1;
                }
                self.pos += 1;
            } else {
                break;
            }
        }
        Ok(())
    }

    fn parse_range(&mut self, comment: &str) -> Result<()> {
        let mut tokens = comment.split_whitespace();
        if tokens.next() != Some(RANGE_TAG) {
            return Ok(());
        }
        let mut num = || -> Result<f64> {
            let t = tokens.next().ok_or_else(|| self.err("depth-range needs two values"))?;
            t.parse().map_err(|_| self.err(format!("'{t}' is not a depth")))
        };
        let (lo, hi) = (num()?, num()?);
        if !(lo > 0.0 && lo.is_finite() && hi.is_finite() && hi >= lo) {
            return Err(self.err(format!("invalid depth range {lo} {hi}")));
        }
        self.range = Some((lo, hi));
        Ok(())
    }

    fn token(&mut self) -> Result<&[u8]> {
        self.skip()?;
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() && self.bytes[self.pos] != b'#' {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err("unexpected end of header"));
        }
        Ok(&self.bytes[start..self.pos])
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        let tok = self.token()?;
        let text = String::from_utf8_lossy(tok).into_owned();
        text.parse().map_err(|_| self.err(format!("{what} '{text}' is not a number")))
    }
}

/// Parses a P5 PGM with maxval 65535. Without a depth-range comment the
/// range defaults to `[1/65535, 1]`.
pub fn decode_pgm(bytes: &[u8], origin: &Path) -> Result<DepthMap> {
    let mut h = Header {
        bytes,
        pos: 0,
        line: 1,
        origin,
        range: None,
    };
    if h.token()? != b"P5" {
        return Err(h.err("not a binary PGM (expected magic 'P5')"));
    }
    let w = h.number("width")?;
    let ht = h.number("height")?;
    let maxval = h.number("maxval")?;
    if maxval != usize::from(PGM_MAXVAL) {
        return Err(h.err(format!("maxval must be {PGM_MAXVAL}, got {maxval}")));
    }
    // Exactly one whitespace byte separates the header from the samples.
    match bytes.get(h.pos) {
        Some(b) if b.is_ascii_whitespace() => h.pos += 1,
        _ => return Err(h.err("missing separator after maxval")),
    }
    let need = w
        .checked_mul(ht)
        .and_then(|n| n.checked_mul(2))
        .ok_or_else(|| h.err("image dimensions overflow"))?;
    let data = &bytes[h.pos..];
    if data.len() != need {
        return Err(h.err(format!("expected {need} sample bytes, found {}", data.len())));
    }
    let (lo, hi) = h.range.unwrap_or((1.0 / 65535.0, 1.0));
    let depth = data
        .chunks_exact(2)
        .map(|c| match u16::from_be_bytes([c[0], c[1]]) {
            0 => 0.0,
            v => dequantize(v, lo, hi),
        })
        .collect();
    DepthMap::from_depths(w, ht, depth)
}

pub fn save_depth_pgm(map: &DepthMap, path: &Path) -> Result<()> {
    super::write(path, &encode_pgm(map))
}

pub fn load_depth_pgm(path: &Path) -> Result<DepthMap> {
    decode_pgm(&super::read(path)?, path)
}
