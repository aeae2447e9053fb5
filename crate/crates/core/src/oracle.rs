//! Slow, literal reference implementations used to check the fast paths.
//!
//! Nothing here shares code with the production routines beyond the camera
//! transform and the point projection, which are tested on their own.

use crate::geometry::{Point3, PointCloud};
use crate::render::{project_point, DepthMap, DepthRule, Projection, RenderConfig};
use crate::views::CameraView;

/// FPS by recomputing every candidate's distance to the whole selected set
/// at each step. `O(n k^2)`.
pub fn farthest_point_sample(points: &[Point3], k: usize) -> Vec<Point3> {
    let k = k.min(points.len());
    let mut chosen: Vec<usize> = vec![0];
    while chosen.len() < k {
        let mut best = usize::MAX;
        let mut best_d = -1.0;
        for i in 0..points.len() {
            if chosen.contains(&i) {
                continue;
            }
            let d = chosen
                .iter()
                .map(|&j| {
                    let a = points[i];
                    let b = points[j];
                    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
                })
                .fold(f64::INFINITY, f64::min);
            if d > best_d {
                best_d = d;
                best = i;
            }
        }
        chosen.push(best);
    }
    chosen.into_iter().map(|i| points[i]).collect()
}

fn in_matching_set(px: i64, py: i64, q: (i64, i64), r: usize) -> bool {
    let half = r as f64 / 2.0;
    let (px, py) = (px as f64, py as f64);
    let (qx, qy) = (q.0 as f64, q.1 as f64);
    px - half <= qx && qx < px + half && py - half <= qy && qy < py + half
}

/// Indices of the points in the matching set of pixel `(px, py)`, in index
/// order.
pub fn matching_set(projected: &[Option<(i64, i64)>], px: i64, py: i64, r: usize) -> Vec<usize> {
    projected
        .iter()
        .enumerate()
        .filter_map(|(i, q)| q.filter(|&q| in_matching_set(px, py, q, r)).map(|_| i))
        .collect()
}

fn project_all(cloud: &PointCloud, view: &CameraView, cfg: &RenderConfig) -> (Vec<Option<(i64, i64)>>, Vec<f64>) {
    let frame = view.frame();
    cloud
        .points()
        .iter()
        .map(|p| {
            let c = frame.to_camera(p);
            match project_point(&c, cfg) {
                Projection::Pixel(x, y) => (Some((x, y)), c[2]),
                Projection::Behind => (None, c[2]),
            }
        })
        .unzip()
}

fn reduce(members: &[usize], z: &[f64], cfg: &RenderConfig) -> f64 {
    if members.is_empty() {
        return 0.0;
    }
    match cfg.rule {
        DepthRule::Minimum => members.iter().map(|&i| z[i]).fold(f64::INFINITY, f64::min),
        DepthRule::Weighted => {
            let mut num = 0.0;
            let mut den = 0.0;
            for &i in members {
                num += z[i] / (z[i] + cfg.epsilon);
                den += 1.0 / z[i];
            }
            num / den
        }
    }
}

/// Evaluates every pixel's matching set by scanning all points.
/// `O(W H n)`; only practical for small frames.
pub fn render_brute_force(cloud: &PointCloud, view: &CameraView, cfg: &RenderConfig) -> DepthMap {
    let (proj, z) = project_all(cloud, view, cfg);
    let n = cfg.resolution;
    let mut depth = vec![0.0; n * n];
    for py in 0..n {
        for px in 0..n {
            let m = matching_set(&proj, px as i64, py as i64, cfg.dilation);
            depth[py * n + px] = reduce(&m, &z, cfg);
        }
    }
    DepthMap::from_depths(n, n, depth).expect("oracle depths are valid")
}

/// Same per-pixel evaluation as [`render_brute_force`], but candidates for
/// each pixel come from a pixel-bucket index over a window wider than any
/// matching set. Membership is still decided by the literal inequality.
pub fn render_bucketed(cloud: &PointCloud, view: &CameraView, cfg: &RenderConfig) -> DepthMap {
    let (proj, z) = project_all(cloud, view, cfg);
    let n = cfg.resolution as i64;
    let r = cfg.dilation as i64;
    let margin = r + 1;
    let side = n + 2 * margin;
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); (side * side) as usize];
    for (i, q) in proj.iter().enumerate() {
        if let Some((qx, qy)) = *q {
            let (bx, by) = (qx.saturating_add(margin), qy.saturating_add(margin));
            if (0..side).contains(&bx) && (0..side).contains(&by) {
                buckets[(by * side + bx) as usize].push(i);
            }
        }
    }

    let mut depth = vec![0.0; (n * n) as usize];
    let mut members = Vec::new();
    for py in 0..n {
        for px in 0..n {
            members.clear();
            for by in (py - r + margin).max(0)..=(py + r + margin).min(side - 1) {
                for bx in (px - r + margin).max(0)..=(px + r + margin).min(side - 1) {
                    for &i in &buckets[(by * side + bx) as usize] {
                        if in_matching_set(px, py, proj[i].unwrap(), cfg.dilation) {
                            members.push(i);
                        }
                    }
                }
            }
            members.sort_unstable();
            depth[(py * n + px) as usize] = reduce(&members, &z, cfg);
        }
    }
    DepthMap::from_depths(n as usize, n as usize, depth).expect("oracle depths are valid")
}

/// `exp(a . b / tau)` with an explicit loop.
pub fn e_term(a: &[f64], b: &[f64], tau: f64) -> f64 {
    let mut dot = 0.0;
    for k in 0..a.len() {
        dot += a[k] * b[k];
    }
    (dot / tau).exp()
}

/// One InfoNCE direction for anchor `i`: positives are `x[i]` vs `y[i]`,
/// the denominator sums `e(x_i, x_k) + e(x_i, y_k)` over the batch and
/// removes `e(x_i, x_i)`.
pub fn info_nce_term(x: &[Vec<f64>], y: &[Vec<f64>], i: usize, tau: f64) -> f64 {
    let mut s = 0.0;
    for k in 0..x.len() {
        s += e_term(&x[i], &x[k], tau) + e_term(&x[i], &y[k], tau);
    }
    let den = s - e_term(&x[i], &x[i], tau);
    -(e_term(&x[i], &y[i], tau) / den).ln()
}

/// Symmetric loss over a batch of paired features.
pub fn symmetric_info_nce(x: &[Vec<f64>], y: &[Vec<f64>], tau: f64) -> f64 {
    let n = x.len();
    let mut total = 0.0;
    for i in 0..n {
        total += info_nce_term(x, y, i, tau) + info_nce_term(y, x, i, tau);
    }
    total / (2.0 * n as f64)
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for k in 0..a.len() {
        dot += a[k] * b[k];
        na += a[k] * a[k];
        nb += b[k] * b[k];
    }
    dot / (na.sqrt() * nb.sqrt())
}

/// View-averaged cosine logits.
pub fn zero_shot_logits(views: &[Vec<f64>], anchors: &[Vec<f64>]) -> Vec<f64> {
    anchors
        .iter()
        .map(|t| views.iter().map(|f| cosine(f, t)).sum::<f64>() / views.len() as f64)
        .collect()
}

/// `x W + b` for a row vector, with `W` stored `[in, out]` row-major.
pub fn linear(x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let out = b.len();
    let mut y = b.to_vec();
    for (i, xi) in x.iter().enumerate() {
        for j in 0..out {
            y[j] += xi * w[i * out + j];
        }
    }
    y
}

fn relu(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(|x| x.max(0.0)).collect()
}

/// Two-layer aggregator over concatenated view features.
pub fn aggregate(views: &[Vec<f64>], w1: &[f64], b1: &[f64], w2: &[f64], b2: &[f64]) -> Vec<f64> {
    let concat: Vec<f64> = views.iter().flatten().copied().collect();
    linear(&relu(linear(&concat, w1, b1)), w2, b2)
}

/// Residual inter-view adapter logits. `wv[v]` is a `C x C` matrix applied
/// as `G W_v^T`.
#[allow(clippy::too_many_arguments)]
pub fn interview_logits(
    views: &[Vec<f64>],
    w1: &[f64],
    b1: &[f64],
    w2: &[f64],
    b2: &[f64],
    wv: &[Vec<f64>],
    alpha: &[f64],
    anchors: &[Vec<f64>],
) -> Vec<f64> {
    let g = aggregate(views, w1, b1, w2, b2);
    let c = g.len();
    let adapted: Vec<Vec<f64>> = views
        .iter()
        .enumerate()
        .map(|(v, f)| {
            (0..c)
                .map(|r| {
                    let mut s = 0.0;
                    for k in 0..c {
                        s += g[k] * wv[v][r * c + k];
                    }
                    f[r] + s.max(0.0)
                })
                .collect()
        })
        .collect();
    anchors
        .iter()
        .map(|t| adapted.iter().zip(alpha).map(|(f, a)| a * cosine(f, t)).sum())
        .collect()
}
