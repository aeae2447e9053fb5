//! Point clouds, unit-sphere normalization and farthest point sampling.

use crate::error::{Error, Result};

pub type Point3 = [f64; 3];

/// An ordered, non-empty set of finite 3D points.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3>,
    id: String,
}

impl PointCloud {
    pub fn new(id: impl Into<String>, points: Vec<Point3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidInput("point cloud is empty".into()));
        }
        if let Some(i) = points.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::InvalidInput(format!(
                "point {i} has a non-finite coordinate"
            )));
        }
        Ok(PointCloud {
            points,
            id: id.into(),
        })
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Point3 {
        let mut c = [0.0; 3];
        for p in &self.points {
            for k in 0..3 {
                c[k] += p[k];
            }
        }
        let n = self.points.len() as f64;
        c.map(|v| v / n)
    }

    /// Largest Euclidean norm over all points.
    pub fn max_norm(&self) -> f64 {
        self.points.iter().map(norm).fold(0.0, f64::max)
    }
}

pub(crate) fn norm(p: &Point3) -> f64 {
    (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()
}

fn dist2(a: &Point3, b: &Point3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Centers the cloud on its centroid and scales it so the farthest point
/// lies at distance 1. A cloud whose points all coincide collapses onto the
/// origin with the scale left at 1.
pub fn normalize(cloud: &PointCloud) -> PointCloud {
    let c = cloud.centroid();
    let mut points: Vec<Point3> = cloud
        .points
        .iter()
        .map(|p| [p[0] - c[0], p[1] - c[1], p[2] - c[2]])
        .collect();
    let max = points.iter().map(norm).fold(0.0, f64::max);
    if max > 0.0 {
        let s = 1.0 / max;
        for p in &mut points {
            for v in p.iter_mut() {
                *v *= s;
            }
        }
    } else {
        points.iter_mut().for_each(|p| *p = [0.0; 3]);
    }
    PointCloud {
        points,
        id: cloud.id.clone(),
    }
}

/// Greedy farthest point sampling.
///
/// Starts from the point at index 0 and repeatedly adds the point whose
/// distance to the selected set is largest, breaking ties by the lowest
/// original index. Returns `min(k, len)` points in selection order.
pub fn farthest_point_sample(cloud: &PointCloud, k: usize) -> Result<PointCloud> {
    if k == 0 {
        return Err(Error::InvalidInput("farthest point sampling needs k >= 1".into()));
    }
    let pts = &cloud.points;
    let n = pts.len();
    let k = k.min(n);

    let mut selected = Vec::with_capacity(k);
    let mut taken = vec![false; n];
    let mut min_d2 = vec![f64::INFINITY; n];

    let mut current = 0usize;
    for _ in 0..k {
        selected.push(current);
        taken[current] = true;
        let anchor = pts[current];

        let mut best: Option<usize> = None;
        let mut best_d = f64::NEG_INFINITY;
        for i in 0..n {
            if taken[i] {
                continue;
            }
            let d = dist2(&pts[i], &anchor);
            if d < min_d2[i] {
                min_d2[i] = d;
            }
            if min_d2[i] > best_d {
                best_d = min_d2[i];
                best = Some(i);
            }
        }
        match best {
            Some(i) => current = i,
            None => break,
        }
    }

    Ok(PointCloud {
        points: selected.iter().map(|&i| pts[i]).collect(),
        id: cloud.id.clone(),
    })
}
