use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CloudFormat {
    /// One `x y z` triple per line; blank lines and `#` comments skipped.
    XyzAscii,
    /// Object File Format; only the vertex list is read.
    Off,
}

impl CloudFormat {
    /// `.off` files are OFF; anything else is read as xyz text.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("off") => CloudFormat::Off,
            _ => CloudFormat::XyzAscii,
        }
    }
}

impl std::str::FromStr for CloudFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "xyz" | "xyz-ascii" => Ok(CloudFormat::XyzAscii),
            "off" => Ok(CloudFormat::Off),
            other => Err(Error::InvalidInput(format!("unknown cloud format '{other}'"))),
        }
    }
}

pub fn load_cloud(path: &Path, format: CloudFormat) -> Result<PointCloud> {
    let bytes = super::read(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|e| {
        let line = bytes[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count() + 1;
        Error::parse(path, line, "file is not valid UTF-8")
    })?;
    let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or("cloud");
    parse_cloud(text, format, path, id)
}

/// Parses cloud text; `origin` only labels diagnostics.
pub fn parse_cloud(text: &str, format: CloudFormat, origin: &Path, id: &str) -> Result<PointCloud> {
    let points = match format {
        CloudFormat::XyzAscii => parse_xyz(text, origin)?,
        CloudFormat::Off => parse_off(text, origin)?,
    };
    PointCloud::new(id, points)
}

/// Non-blank lines with comments stripped, paired with 1-based numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.split('#').next().unwrap_or("").trim();
        (!l.is_empty()).then_some((i + 1, l))
    })
}

fn last_line(text: &str) -> usize {
    text.lines().count().max(1)
}

fn parse_point(line: &str, n: usize, origin: &Path) -> Result<Point3> {
    let tokens: Vec<&str> = line.split_whitespace().collect();
    if tokens.len() != 3 {
        return Err(Error::parse(origin, n, format!("expected 3 coordinates, found {}", tokens.len())));
    }
    let mut p = [0.0; 3];
    for (slot, tok) in p.iter_mut().zip(&tokens) {
        let v: f64 = tok
            .parse()
            .map_err(|_| Error::parse(origin, n, format!("'{tok}' is not a number")))?;
        if !v.is_finite() {
            return Err(Error::parse(origin, n, format!("'{tok}' is not finite")));
        }
        *slot = v;
    }
    Ok(p)
}

fn parse_xyz(text: &str, origin: &Path) -> Result<Vec<Point3>> {
    let points: Vec<Point3> = content_lines(text)
        .map(|(n, l)| parse_point(l, n, origin))
        .collect::<Result<_>>()?;
    if points.is_empty() {
        return Err(Error::parse(origin, last_line(text), "no points"));
    }
    Ok(points)
}

fn parse_count(tok: &str, n: usize, origin: &Path) -> Result<usize> {
    tok.parse()
        .map_err(|_| Error::parse(origin, n, format!("'{tok}' is not a count")))
}

fn parse_off(text: &str, origin: &Path) -> Result<Vec<Point3>> {
    let mut lines = content_lines(text);
    let (n, header) = lines
        .next()
        .ok_or_else(|| Error::parse(origin, 1, "missing OFF header"))?;
    let rest = header
        .strip_prefix("OFF")
        .ok_or_else(|| Error::parse(origin, n, "header must start with 'OFF'"))?;
    // The counts may share the header line.
    let (n, counts) = if rest.trim().is_empty() {
        lines
            .next()
            .ok_or_else(|| Error::parse(origin, last_line(text), "missing vertex/face counts"))?
    } else {
        (n, rest.trim())
    };
    let counts: Vec<&str> = counts.split_whitespace().collect();
    if counts.len() != 3 {
        return Err(Error::parse(origin, n, "expected 'vertices faces edges' counts"));
    }
    let nv = parse_count(counts[0], n, origin)?;
    parse_count(counts[1], n, origin)?;
    parse_count(counts[2], n, origin)?;
    if nv == 0 {
        return Err(Error::parse(origin, n, "empty vertex list"));
    }
    let mut points = Vec::with_capacity(nv.min(1 << 20));
    for _ in 0..nv {
        let (n, l) = lines.next().ok_or_else(|| {
            Error::parse(
                origin,
                last_line(text),
                format!("file ends after {} of {nv} vertices", points.len()),
            )
        })?;
        points.push(parse_point(l, n, origin)?);
    }
    Ok(points)
}
