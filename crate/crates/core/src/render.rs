//! Point-cloud to depth-map rasterization.
//!
//! Every point is projected with a pinhole camera and splatted into the
//! `R x R` block of pixels whose matching set contains it: a pixel `(px, py)`
//! collects a point projecting to `(qx, qy)` when
//! `px - R/2 <= qx < px + R/2` and likewise for `y`. Each pixel then keeps
//! either the nearest depth or the ratio of summed `z / (z + eps)` to summed
//! `1 / z` over its matching set.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud};
use crate::views::{CameraView, ViewSet};

/// Normalized clouds may overshoot the unit sphere by this much.
pub const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DepthRule {
    /// Nearest depth in the matching set.
    #[serde(alias = "min")]
    Minimum,
    /// `sum(z / (z + eps)) / sum(1 / z)` over the matching set.
    Weighted,
}

impl std::str::FromStr for DepthRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "min" | "minimum" => Ok(DepthRule::Minimum),
            "weighted" => Ok(DepthRule::Weighted),
            other => Err(Error::InvalidInput(format!("unknown depth rule '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    /// Square output side in pixels.
    pub resolution: usize,
    /// Side of the pixel block each point covers.
    pub dilation: usize,
    pub rule: DepthRule,
    /// Pixels per unit of `x / z`.
    pub focal: f64,
    pub epsilon: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            resolution: 224,
            dilation: 2,
            rule: DepthRule::Minimum,
            focal: 100.0,
            epsilon: 1e-12,
        }
    }
}

impl RenderConfig {
    /// Sparse renders fed to the trainable depth encoder.
    pub fn sparse() -> Self {
        Self::default()
    }

    /// Dense renders standing in for the image modality.
    pub fn dense() -> Self {
        RenderConfig {
            dilation: 4,
            rule: DepthRule::Weighted,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution < 8 {
            return Err(Error::InvalidInput(format!(
                "resolution must be at least 8, got {}",
                self.resolution
            )));
        }
        if self.dilation < 1 {
            return Err(Error::InvalidInput("dilation must be at least 1".into()));
        }
        if !(self.focal > 0.0) || !self.focal.is_finite() {
            return Err(Error::InvalidInput(format!("focal must be positive, got {}", self.focal)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidInput("epsilon must be positive".into()));
        }
        Ok(())
    }

    /// Offsets `(lo, hi)` such that a point at pixel `q` lands in pixels
    /// `q - lo ..= q + hi` along each axis.
    pub fn splat_offsets(&self) -> (i64, i64) {
        let r = self.dilation as i64;
        ((r - 1) / 2, r / 2)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Projection {
    Pixel(i64, i64),
    Behind,
}

/// Projects a camera-space point to its (unclipped) pixel.
#[inline]
pub fn project_point(p: &Point3, cfg: &RenderConfig) -> Projection {
    let z = p[2];
    if !(z > 0.0) {
        return Projection::Behind;
    }
    let half = cfg.resolution as f64 / 2.0;
    // `as` saturates, so points grazing the camera plane stay far off frame.
    let x = (cfg.focal * p[0] / z + half).ceil() as i64;
    let y = (cfg.focal * p[1] / z + half).ceil() as i64;
    Projection::Pixel(x, y)
}

/// A rendered depth map, row-major with `y` as the row index.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    depth: Vec<f64>,
    occupied: Vec<bool>,
}

impl DepthMap {
    pub fn empty(width: usize, height: usize) -> Self {
        DepthMap {
            width,
            height,
            depth: vec![0.0; width * height],
            occupied: vec![false; width * height],
        }
    }

    /// Builds a map from raw depths; a pixel is occupied iff its depth is
    /// positive.
    pub fn from_depths(width: usize, height: usize, depth: Vec<f64>) -> Result<Self> {
        if depth.len() != width * height {
            return Err(Error::Shape(format!(
                "depth buffer has {} values for a {width}x{height} map",
                depth.len()
            )));
        }
        if depth.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::InvalidInput("depths must be finite and non-negative".into()));
        }
        let occupied = depth.iter().map(|&d| d > 0.0).collect();
        Ok(DepthMap {
            width,
            height,
            depth,
            occupied,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn depth(&self) -> &[f64] {
        &self.depth
    }

    pub fn occupied(&self) -> &[bool] {
        &self.occupied
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.depth[y * self.width + x]
    }

    pub fn is_occupied(&self, x: usize, y: usize) -> bool {
        self.occupied[y * self.width + x]
    }

    pub fn occupied_count(&self) -> usize {
        self.occupied.iter().filter(|&&o| o).count()
    }

    /// `(min, max)` depth over occupied pixels.
    pub fn depth_range(&self) -> Option<(f64, f64)> {
        let mut range: Option<(f64, f64)> = None;
        for (d, &o) in self.depth.iter().zip(&self.occupied) {
            if o {
                range = Some(match range {
                    None => (*d, *d),
                    Some((lo, hi)) => (lo.min(*d), hi.max(*d)),
                });
            }
        }
        range
    }
}

fn check_normalized(cloud: &PointCloud) -> Result<()> {
    let m = cloud.max_norm();
    if m > 1.0 + NORM_TOLERANCE {
        return Err(Error::InvalidInput(format!(
            "cloud '{}' is not normalized (max norm {m})",
            cloud.id()
        )));
    }
    Ok(())
}

/// Renders one view of a normalized cloud.
pub fn render(cloud: &PointCloud, view: &CameraView, cfg: &RenderConfig) -> Result<DepthMap> {
    cfg.validate()?;
    view.validate()?;
    check_normalized(cloud)?;

    let n = cfg.resolution;
    let size = n as i64;
    let frame = view.frame();
    let (lo, hi) = cfg.splat_offsets();

    // Per-point pixel blocks clipped to the frame; `None` if the block misses it.
    let block = |q: (i64, i64)| -> Option<(usize, usize, usize, usize)> {
        let x0 = (q.0 - lo).max(0);
        let x1 = (q.0 + hi).min(size - 1);
        let y0 = (q.1 - lo).max(0);
        let y1 = (q.1 + hi).min(size - 1);
        (x0 <= x1 && y0 <= y1).then_some((x0 as usize, x1 as usize, y0 as usize, y1 as usize))
    };

    let mut map = DepthMap::empty(n, n);
    match cfg.rule {
        DepthRule::Minimum => {
            let mut best = vec![f64::INFINITY; n * n];
            for p in cloud.points() {
                let c = frame.to_camera(p);
                let Projection::Pixel(qx, qy) = project_point(&c, cfg) else {
                    continue;
                };
                let Some((x0, x1, y0, y1)) = block((qx, qy)) else {
                    continue;
                };
                for y in y0..=y1 {
                    let row = &mut best[y * n + x0..=y * n + x1];
                    for b in row {
                        if c[2] < *b {
                            *b = c[2];
                        }
                    }
                }
            }
            for (i, b) in best.into_iter().enumerate() {
                if b.is_finite() {
                    map.depth[i] = b;
                    map.occupied[i] = true;
                }
            }
        }
        DepthRule::Weighted => {
            let mut num = vec![0.0; n * n];
            let mut den = vec![0.0; n * n];
            let mut hits = vec![false; n * n];
            for p in cloud.points() {
                let c = frame.to_camera(p);
                let Projection::Pixel(qx, qy) = project_point(&c, cfg) else {
                    continue;
                };
                let Some((x0, x1, y0, y1)) = block((qx, qy)) else {
                    continue;
                };
                let z = c[2];
                let a = z / (z + cfg.epsilon);
                let b = 1.0 / z;
                for y in y0..=y1 {
                    for i in y * n + x0..=y * n + x1 {
                        num[i] += a;
                        den[i] += b;
                        hits[i] = true;
                    }
                }
            }
            for i in 0..n * n {
                if hits[i] {
                    let d = num[i] / den[i];
                    if !d.is_finite() || d <= 0.0 {
                        return Err(Error::Numerics(format!(
                            "weighted depth at pixel {i} is {d}"
                        )));
                    }
                    map.depth[i] = d;
                    map.occupied[i] = true;
                }
            }
        }
    }
    Ok(map)
}

/// Renders every view of `views`, in order. Views are rendered in parallel.
pub fn render_views(cloud: &PointCloud, views: &ViewSet, cfg: &RenderConfig) -> Result<Vec<DepthMap>> {
    views
        .views()
        .par_iter()
        .map(|v| render(cloud, v, cfg))
        .collect()
}
