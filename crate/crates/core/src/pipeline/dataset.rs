//! Seeded toy dataset of parametric shape families.

use std::f64::consts::{PI, TAU};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{farthest_point_sample, normalize, Point3, PointCloud};

pub const SHAPE_FAMILIES: [&str; 8] = [
    "sphere", "cube", "cylinder", "cone", "torus", "cross", "bracket", "capsule",
];

/// A labelled point cloud.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub cloud: PointCloud,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSpec {
    pub classes: usize,
    pub per_class: usize,
    /// Samples per class that go to the test split; the rest train.
    pub test_per_class: usize,
    pub raw_points: usize,
    pub points: usize,
    /// Std of the Gaussian noise added to every coordinate before
    /// normalization, relative to a shape of unit extent.
    pub noise: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            classes: 8,
            per_class: 250,
            test_per_class: 50,
            raw_points: 2048,
            points: 1024,
            noise: 0.05,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.classes > SHAPE_FAMILIES.len() {
            return Err(Error::InvalidInput(format!(
                "classes must be in 2..={}, got {}",
                SHAPE_FAMILIES.len(),
                self.classes
            )));
        }
        if self.test_per_class == 0 || self.test_per_class >= self.per_class {
            return Err(Error::InvalidInput(
                "every class needs at least one train and one test sample".into(),
            ));
        }
        if self.points == 0 || self.raw_points < self.points {
            return Err(Error::InvalidInput("need raw_points >= points >= 1".into()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::InvalidInput("noise must be finite and non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyDataset {
    pub samples: Vec<Sample>,
    pub class_names: Vec<String>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl ToyDataset {
    pub fn classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn train_samples(&self) -> Vec<Sample> {
        self.train.iter().map(|&i| self.samples[i].clone()).collect()
    }

    pub fn labels(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.samples[i].label).collect()
    }

    /// The first `k` training samples of every class, ordered by sample id.
    pub fn k_shot(&self, k: usize) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(k * self.classes());
        for c in 0..self.classes() {
            let mut idx: Vec<usize> = self.train.iter().copied().filter(|&i| self.samples[i].label == c).collect();
            if k > idx.len() {
                return Err(Error::InvalidInput(format!(
                    "k = {k} exceeds the {} training samples of class '{}'",
                    idx.len(),
                    self.class_names[c]
                )));
            }
            idx.sort_by(|&a, &b| self.samples[a].cloud.id().cmp(self.samples[b].cloud.id()));
            out.extend_from_slice(&idx[..k]);
        }
        Ok(out)
    }
}

pub fn generate_toy_dataset(seed: u64, classes: usize, per_class: usize) -> Result<ToyDataset> {
    let spec = DatasetSpec {
        classes,
        per_class,
        test_per_class: (per_class / 5).max(1),
        ..DatasetSpec::default()
    };
    generate_dataset(seed, &spec)
}

/// Every sample draws from its own stream, so generation order and thread
/// count do not matter.
pub fn generate_dataset(seed: u64, spec: &DatasetSpec) -> Result<ToyDataset> {
    spec.validate()?;
    let jobs: Vec<(usize, usize)> = (0..spec.classes)
        .flat_map(|c| (0..spec.per_class).map(move |i| (c, i)))
        .collect();
    let samples = jobs
        .par_iter()
        .map(|&(c, i)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream((c * spec.per_class + i) as u64);
            let raw = sample_shape(c, spec, &mut rng);
            let id = format!("{}_{i:04}", SHAPE_FAMILIES[c]);
            let cloud = normalize(&PointCloud::new(id, raw)?);
            let cloud = normalize(&farthest_point_sample(&cloud, spec.points)?);
            Ok(Sample { cloud, label: c })
        })
        .collect::<Result<Vec<_>>>()?;

    let train_per_class = spec.per_class - spec.test_per_class;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for c in 0..spec.classes {
        let base = c * spec.per_class;
        train.extend(base..base + train_per_class);
        test.extend(base + train_per_class..base + spec.per_class);
    }
    Ok(ToyDataset {
        samples,
        class_names: SHAPE_FAMILIES[..spec.classes].iter().map(|s| s.to_string()).collect(),
        train,
        test,
    })
}

fn sample_shape(class: usize, spec: &DatasetSpec, rng: &mut ChaCha8Rng) -> Vec<Point3> {
    // Mild per-sample proportions keep instances of a family distinct.
    let mut s = || rng.random_range(0.85..1.15);
    let (a, b, c) = (s(), s(), s());
    let surface: Surface = match class {
        0 => Surface::Parts(vec![Part::Ellipsoid([a, b, c])]),
        1 => Surface::Parts(vec![Part::Box([0.0; 3], [0.8 * a, 0.8 * b, 0.8 * c])]),
        2 => Surface::Parts(vec![Part::Cylinder { radius: 0.6 * a, half_height: 1.0 * b }]),
        3 => Surface::Parts(vec![Part::Cone { radius: 0.8 * a, half_height: 1.0 * b }]),
        4 => Surface::Parts(vec![Part::Torus { major: 0.8 * a, minor: 0.3 * b }]),
        5 => Surface::Parts(vec![
            Part::Box([0.0, 0.0, 0.0], [0.15 * a, 0.15 * a, 1.0 * b]),
            Part::Box([0.0, 0.05, 0.2], [1.0 * c, 0.04, 0.25]),
        ]),
        6 => Surface::Parts(vec![
            Part::Box([-0.6 * a, 0.0, 0.0], [0.15, 0.8 * b, 0.5 * c]),
            Part::Box([0.0, -0.65 * b, 0.0], [0.75 * a, 0.15, 0.5 * c]),
        ]),
        7 => Surface::Parts(vec![Part::Capsule { radius: 0.4 * a, half_length: 0.6 * b }]),
        _ => unreachable!("class validated against the family list"),
    };
    let theta = rng.random_range(0.0..TAU);
    let (sin, cos) = theta.sin_cos();
    let noise = Normal::new(0.0, spec.noise).expect("validated noise");
    (0..spec.raw_points)
        .map(|_| {
            let p = surface.sample(rng);
            let r = [cos * p[0] + sin * p[2], p[1], -sin * p[0] + cos * p[2]];
            r.map(|v| v + noise.sample(rng))
        })
        .collect()
}

enum Part {
    Ellipsoid([f64; 3]),
    Box(Point3, [f64; 3]),
    Cylinder { radius: f64, half_height: f64 },
    Cone { radius: f64, half_height: f64 },
    Torus { major: f64, minor: f64 },
    Capsule { radius: f64, half_length: f64 },
}

enum Surface {
    Parts(Vec<Part>),
}

impl Part {
    /// Surface area; the ellipsoid uses the Knud Thomsen approximation.
    fn area(&self) -> f64 {
        match *self {
            Part::Ellipsoid([a, b, c]) => {
                let p = 1.6075;
                let m = ((a * b).powf(p) + (a * c).powf(p) + (b * c).powf(p)) / 3.0;
                4.0 * PI * m.powf(1.0 / p)
            }
            Part::Box(_, [x, y, z]) => 8.0 * (x * y + y * z + x * z),
            Part::Cylinder { radius, half_height } => TAU * radius * 2.0 * half_height + 2.0 * PI * radius * radius,
            Part::Cone { radius, half_height } => {
                let slant = (radius * radius + 4.0 * half_height * half_height).sqrt();
                PI * radius * slant + PI * radius * radius
            }
            Part::Torus { major, minor } => 4.0 * PI * PI * major * minor,
            Part::Capsule { radius, half_length } => TAU * radius * 2.0 * half_length + 4.0 * PI * radius * radius,
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Point3 {
        match *self {
            Part::Ellipsoid(axes) => {
                let d = unit_vector(rng);
                [d[0] * axes[0], d[1] * axes[1], d[2] * axes[2]]
            }
            Part::Box(center, h) => {
                let faces = [h[1] * h[2], h[1] * h[2], h[0] * h[2], h[0] * h[2], h[0] * h[1], h[0] * h[1]];
                let f = pick(&faces, rng);
                let mut p = [
                    rng.random_range(-h[0]..=h[0]),
                    rng.random_range(-h[1]..=h[1]),
                    rng.random_range(-h[2]..=h[2]),
                ];
                let axis = f / 2;
                p[axis] = if f.is_multiple_of(2) { -h[axis] } else { h[axis] };
                [p[0] + center[0], p[1] + center[1], p[2] + center[2]]
            }
            Part::Cylinder { radius, half_height } => {
                let side = TAU * radius * 2.0 * half_height;
                let cap = PI * radius * radius;
                match pick(&[side, cap, cap], rng) {
                    0 => {
                        let t = rng.random_range(0.0..TAU);
                        [radius * t.cos(), rng.random_range(-half_height..=half_height), radius * t.sin()]
                    }
                    k => {
                        let [x, z] = disc(radius, rng);
                        [x, if k == 1 { -half_height } else { half_height }, z]
                    }
                }
            }
            Part::Cone { radius, half_height } => {
                let slant = (radius * radius + 4.0 * half_height * half_height).sqrt();
                if pick(&[PI * radius * slant, PI * radius * radius], rng) == 0 {
                    // Lateral area grows linearly with distance from the apex.
                    let s = rng.random::<f64>().sqrt();
                    let t = rng.random_range(0.0..TAU);
                    [s * radius * t.cos(), half_height - 2.0 * half_height * s, s * radius * t.sin()]
                } else {
                    let [x, z] = disc(radius, rng);
                    [x, -half_height, z]
                }
            }
            Part::Torus { major, minor } => loop {
                let u = rng.random_range(0.0..TAU);
                let v = rng.random_range(0.0..TAU);
                let w = (major + minor * v.cos()) / (major + minor);
                if rng.random::<f64>() <= w {
                    let ring = major + minor * v.cos();
                    break [ring * u.cos(), minor * v.sin(), ring * u.sin()];
                }
            },
            Part::Capsule { radius, half_length } => {
                let side = TAU * radius * 2.0 * half_length;
                if pick(&[side, 4.0 * PI * radius * radius], rng) == 0 {
                    let t = rng.random_range(0.0..TAU);
                    [radius * t.cos(), rng.random_range(-half_length..=half_length), radius * t.sin()]
                } else {
                    let d = unit_vector(rng);
                    let shift = if d[1] >= 0.0 { half_length } else { -half_length };
                    [radius * d[0], radius * d[1] + shift, radius * d[2]]
                }
            }
        }
    }
}

impl Surface {
    fn sample(&self, rng: &mut ChaCha8Rng) -> Point3 {
        let Surface::Parts(parts) = self;
        let areas: Vec<f64> = parts.iter().map(Part::area).collect();
        parts[pick(&areas, rng)].sample(rng)
    }
}

fn pick(weights: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

fn unit_vector(rng: &mut ChaCha8Rng) -> Point3 {
    loop {
        let v: Point3 = [
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        ];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-12 {
            break v.map(|x| x / n);
        }
    }
}

fn disc(radius: f64, rng: &mut ChaCha8Rng) -> [f64; 2] {
    let r = radius * rng.random::<f64>().sqrt();
    let t = rng.random_range(0.0..TAU);
    [r * t.cos(), r * t.sin()]
}
