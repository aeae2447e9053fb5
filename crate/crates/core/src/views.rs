//! Camera views around the origin.
//!
//! Axis convention: right-handed, Y up. A view at azimuth `a` and elevation
//! `e` places the camera at `distance * (cos e sin a, sin e, cos e cos a)`
//! looking at the origin, so the front view (0, 0) looks down -Z.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, FRAC_PI_6, PI};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point3;

/// Lower bound of the pre-training distance jitter.
pub const JITTER_MIN: f64 = 0.9;
/// Exclusive upper bound of the pre-training distance jitter.
pub const JITTER_MAX: f64 = 1.1;

/// Default elevation of the four corner views.
pub const DEFAULT_CORNER_ELEVATION: f64 = FRAC_PI_6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraView {
    pub azimuth: f64,
    pub elevation: f64,
    pub distance: f64,
}

impl CameraView {
    pub fn new(azimuth: f64, elevation: f64, distance: f64) -> Result<Self> {
        let v = CameraView {
            azimuth,
            elevation,
            distance,
        };
        v.validate()?;
        Ok(v)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.distance > 0.0) || !self.distance.is_finite() {
            return Err(Error::InvalidInput(format!(
                "view distance must be positive, got {}",
                self.distance
            )));
        }
        if !(self.elevation.abs() <= FRAC_PI_2) || !self.azimuth.is_finite() {
            return Err(Error::InvalidInput(format!(
                "view angles out of range: azimuth {}, elevation {}",
                self.azimuth, self.elevation
            )));
        }
        Ok(())
    }

    fn at(azimuth: f64, elevation: f64) -> Self {
        CameraView {
            azimuth,
            elevation,
            distance: 1.0,
        }
    }

    pub fn with_distance(self, distance: f64) -> Self {
        CameraView { distance, ..self }
    }

    /// Camera position in world coordinates.
    pub fn position(&self) -> Point3 {
        let (sa, ca) = self.azimuth.sin_cos();
        let (se, ce) = self.elevation.sin_cos();
        [
            self.distance * ce * sa,
            self.distance * se,
            self.distance * ce * ca,
        ]
    }

    /// Unit vector from the camera toward the origin.
    pub fn direction(&self) -> Point3 {
        let (sa, ca) = self.azimuth.sin_cos();
        let (se, ce) = self.elevation.sin_cos();
        [-ce * sa, -se, -ce * ca]
    }

    /// Orthonormal camera frame: (right, up, forward).
    pub fn frame(&self) -> CameraFrame {
        let f = self.direction();
        let (sa, ca) = self.azimuth.sin_cos();
        // Horizontal right vector; stays defined at the poles.
        let r = [ca, 0.0, -sa];
        let u = [
            r[1] * f[2] - r[2] * f[1],
            r[2] * f[0] - r[0] * f[2],
            r[0] * f[1] - r[1] * f[0],
        ];
        CameraFrame {
            origin: self.position(),
            right: r,
            up: u,
            forward: f,
        }
    }
}

/// World-to-camera transform for one view. Camera space has +z pointing
/// into the screen.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraFrame {
    pub origin: Point3,
    pub right: Point3,
    pub up: Point3,
    pub forward: Point3,
}

impl CameraFrame {
    #[inline]
    pub fn to_camera(&self, p: &Point3) -> Point3 {
        let d = [
            p[0] - self.origin[0],
            p[1] - self.origin[1],
            p[2] - self.origin[2],
        ];
        let dot = |a: &Point3| d[0] * a[0] + d[1] * a[1] + d[2] * a[2];
        [dot(&self.right), dot(&self.up), dot(&self.forward)]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViewKind {
    #[serde(alias = "orth6")]
    Orthogonal6,
    #[serde(alias = "sph10")]
    Spherical10,
}

impl ViewKind {
    pub fn count(self) -> usize {
        match self {
            ViewKind::Orthogonal6 => 6,
            ViewKind::Spherical10 => 10,
        }
    }
}

impl fmt::Display for ViewKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ViewKind::Orthogonal6 => "orthogonal6",
            ViewKind::Spherical10 => "spherical10",
        })
    }
}

impl FromStr for ViewKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "orthogonal6" | "orth6" => Ok(ViewKind::Orthogonal6),
            "spherical10" | "sph10" => Ok(ViewKind::Spherical10),
            other => Err(Error::InvalidInput(format!("unknown view set '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewSet {
    kind: ViewKind,
    views: Vec<CameraView>,
}

impl ViewSet {
    pub fn new(kind: ViewKind, views: Vec<CameraView>) -> Result<Self> {
        if views.len() != kind.count() {
            return Err(Error::InvalidInput(format!(
                "{kind} needs {} views, got {}",
                kind.count(),
                views.len()
            )));
        }
        for v in &views {
            v.validate()?;
        }
        Ok(ViewSet { kind, views })
    }

    pub fn of_kind(kind: ViewKind) -> Self {
        match kind {
            ViewKind::Orthogonal6 => orthogonal_views(),
            ViewKind::Spherical10 => spherical_views(),
        }
    }

    pub fn kind(&self) -> ViewKind {
        self.kind
    }

    pub fn views(&self) -> &[CameraView] {
        &self.views
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    /// Plain-text form: a `kind <name>` line followed by one
    /// `azimuth elevation distance` line per view. `#` starts a comment.
    pub fn to_text(&self) -> String {
        let mut out = format!("kind {}\n", self.kind);
        for v in &self.views {
            out.push_str(&format!("{} {} {}\n", v.azimuth, v.elevation, v.distance));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut kind = None;
        let mut views = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |msg: String| Error::InvalidInput(format!("view file line {}: {msg}", lineno + 1));
            if let Some(rest) = line.strip_prefix("kind") {
                kind = Some(rest.trim().parse::<ViewKind>().map_err(|e| bad(e.to_string()))?);
                continue;
            }
            let nums: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| bad(format!("not a number: '{t}'"))))
                .collect::<Result<_>>()?;
            if nums.len() != 3 {
                return Err(bad(format!("expected 3 values, got {}", nums.len())));
            }
            views.push(CameraView::new(nums[0], nums[1], nums[2]).map_err(|e| bad(e.to_string()))?);
        }
        let kind = kind.ok_or_else(|| Error::InvalidInput("view file has no 'kind' line".into()))?;
        ViewSet::new(kind, views)
    }
}

/// Front, back, left, right, top and bottom views at distance 1.
pub fn orthogonal_views() -> ViewSet {
    ViewSet {
        kind: ViewKind::Orthogonal6,
        views: vec![
            CameraView::at(0.0, 0.0),
            CameraView::at(PI, 0.0),
            CameraView::at(FRAC_PI_2, 0.0),
            CameraView::at(-FRAC_PI_2, 0.0),
            CameraView::at(0.0, FRAC_PI_2),
            CameraView::at(0.0, -FRAC_PI_2),
        ],
    }
}

/// The orthogonal views followed by four corner views at the default
/// corner elevation.
pub fn spherical_views() -> ViewSet {
    spherical_views_with(DEFAULT_CORNER_ELEVATION)
}

pub fn spherical_views_with(corner_elevation: f64) -> ViewSet {
    let mut views = orthogonal_views().views;
    for az in [FRAC_PI_4, 3.0 * FRAC_PI_4, -3.0 * FRAC_PI_4, -FRAC_PI_4] {
        views.push(CameraView::at(az, corner_elevation));
    }
    ViewSet {
        kind: ViewKind::Spherical10,
        views,
    }
}

/// Draws one distance uniformly from `[JITTER_MIN, JITTER_MAX)` using
/// exactly one value from the stream.
fn jitter_draw<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    let d = JITTER_MIN + (JITTER_MAX - JITTER_MIN) * u;
    // Rounding can land on the excluded bound when u is just below 1.
    if d >= JITTER_MAX {
        JITTER_MAX.next_down()
    } else {
        d
    }
}

/// Two copies of `view` with independently jittered distances.
pub fn jitter_distance<R: Rng + ?Sized>(view: &CameraView, rng: &mut R) -> (CameraView, CameraView) {
    let d1 = jitter_draw(rng);
    let d2 = jitter_draw(rng);
    (view.with_distance(d1), view.with_distance(d2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngCore, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dot(a: Point3, b: Point3) -> f64 {
        a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
    }

    #[test]
    fn orthogonal_set() {
        let set = orthogonal_views();
        assert_eq!(set.len(), 6);
        assert!(set.views().iter().all(|v| v.distance == 1.0));
        let d0 = set.views()[0].direction();
        assert!((d0[0]).abs() < 1e-15 && (d0[1]).abs() < 1e-15 && (d0[2] + 1.0).abs() < 1e-15);
        for a in set.views() {
            for b in set.views() {
                if a == b {
                    continue;
                }
                let d = dot(a.direction(), b.direction());
                assert!(d.abs() < 1e-12 || (d + 1.0).abs() < 1e-12, "dot = {d}");
            }
        }
    }

    #[test]
    fn spherical_set() {
        let set = spherical_views();
        assert_eq!(set.len(), 10);
        assert_eq!(&set.views()[..6], orthogonal_views().views());
        assert!(set.views().iter().all(|v| v.distance == 1.0));
        assert!(set.views()[6..].iter().all(|v| v.elevation == FRAC_PI_6));
    }

    #[test]
    fn frames_are_orthonormal() {
        for v in spherical_views().views() {
            let f = v.frame();
            for (a, b) in [(f.right, f.up), (f.right, f.forward), (f.up, f.forward)] {
                assert!(dot(a, b).abs() < 1e-12);
            }
            for a in [f.right, f.up, f.forward] {
                assert!((dot(a, a) - 1.0).abs() < 1e-12);
            }
            // The origin sits on the optical axis at the view distance.
            let o = f.to_camera(&[0.0; 3]);
            assert!(o[0].abs() < 1e-12 && o[1].abs() < 1e-12);
            assert!((o[2] - v.distance).abs() < 1e-12);
        }
    }

    #[test]
    fn front_view_frame_is_identity_like() {
        let f = orthogonal_views().views()[0].frame();
        let p = f.to_camera(&[0.25, 0.5, 0.0]);
        assert!((p[0] - 0.25).abs() < 1e-15);
        assert!((p[1] - 0.5).abs() < 1e-15);
        assert!((p[2] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn jitter_preserves_angles_and_range() {
        let base = spherical_views().views()[7];
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..10_000 {
            let (a, b) = jitter_distance(&base, &mut rng);
            for v in [a, b] {
                assert_eq!(v.azimuth, base.azimuth);
                assert_eq!(v.elevation, base.elevation);
                assert!(v.distance >= JITTER_MIN && v.distance < JITTER_MAX);
            }
        }
    }

    #[test]
    fn jitter_is_deterministic_and_uses_two_draws() {
        let v = orthogonal_views().views()[0];
        let mut r1 = ChaCha8Rng::seed_from_u64(42);
        let mut r2 = ChaCha8Rng::seed_from_u64(42);
        assert_eq!(jitter_distance(&v, &mut r1), jitter_distance(&v, &mut r2));

        let mut r3 = ChaCha8Rng::seed_from_u64(42);
        let _ = jitter_distance(&v, &mut r3);
        let mut r4 = ChaCha8Rng::seed_from_u64(42);
        r4.next_u64();
        r4.next_u64();
        assert_eq!(r3.next_u64(), r4.next_u64());
    }

    struct MaxRng;
    impl RngCore for MaxRng {
        fn next_u32(&mut self) -> u32 {
            u32::MAX
        }
        fn next_u64(&mut self) -> u64 {
            u64::MAX
        }
        fn fill_bytes(&mut self, dst: &mut [u8]) {
            dst.fill(0xff)
        }
    }

    #[test]
    fn jitter_upper_bound_is_excluded() {
        let (a, b) = jitter_distance(&orthogonal_views().views()[0], &mut MaxRng);
        assert!(a.distance < JITTER_MAX && b.distance < JITTER_MAX);
    }

    #[test]
    fn view_text_round_trip() {
        let set = spherical_views();
        let back = ViewSet::from_text(&set.to_text()).unwrap();
        assert_eq!(back, set);
        assert!(ViewSet::from_text("kind orthogonal6\n0 0 1\n").is_err());
        assert!(ViewSet::from_text("0 0 1\n").is_err());
        assert!(ViewSet::from_text("kind spherical10\n0 0 -1\n").is_err());
    }
}
