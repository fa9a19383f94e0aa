//! Seeded synthetic point-cloud datasets for desk-scale experiments.

use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng;

use crate::error::{bail, Result};
use crate::geometry::{Point, PointCloud};
use crate::rng::{rng_for, standard_normal, SeededRng, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    Sphere,
    Cube,
    Cylinder,
    Torus,
}

impl Shape {
    pub const ALL: [Shape; 4] = [Shape::Sphere, Shape::Cube, Shape::Cylinder, Shape::Torus];

    pub fn name(self) -> &'static str {
        match self {
            Shape::Sphere => "sphere",
            Shape::Cube => "cube",
            Shape::Cylinder => "cylinder",
            Shape::Torus => "torus",
        }
    }
}

fn sample_surface(shape: Shape, rng: &mut SeededRng) -> Point {
    match shape {
        Shape::Sphere => loop {
            let v = [standard_normal(rng), standard_normal(rng), standard_normal(rng)];
            let n = Float::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
            if n > 1e-6 {
                break [v[0] / n, v[1] / n, v[2] / n];
            }
        },
        Shape::Cube => {
            let face = rng.random_range(0..6);
            let (a, b): (f32, f32) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let s = if face % 2 == 0 { 1.0 } else { -1.0 };
            match face / 2 {
                0 => [s, a, b],
                1 => [a, s, b],
                _ => [a, b, s],
            }
        }
        Shape::Cylinder => {
            // radius 0.5, height 2: side area 2*pi, caps 2 * pi / 4
            let t: f32 = rng.random_range(0.0..core::f32::consts::TAU);
            if rng.random_range(0.0..1.25f32) < 1.0 {
                [0.5 * libm::cosf(t), 0.5 * libm::sinf(t), rng.random_range(-1.0..1.0)]
            } else {
                let r = 0.5 * Float::sqrt(rng.random_range(0.0..1.0f32));
                let z = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                [r * libm::cosf(t), r * libm::sinf(t), z]
            }
        }
        Shape::Torus => {
            let (big, small) = (0.75f32, 0.25f32);
            // rejection on the tube angle makes the area density uniform
            loop {
                let u: f32 = rng.random_range(0.0..core::f32::consts::TAU);
                let v: f32 = rng.random_range(0.0..core::f32::consts::TAU);
                let w = (big + small * libm::cosf(v)) / (big + small);
                if rng.random_range(0.0..1.0f32) <= w {
                    let ring = big + small * libm::cosf(v);
                    break [ring * libm::cosf(u), ring * libm::sinf(u), small * libm::sinf(v)];
                }
            }
        }
    }
}

/// Random z-rotation, per-axis scale in `[0.85, 1.15]` and Gaussian jitter.
fn augment(points: &mut [Point], noise: f32, rng: &mut SeededRng) {
    let theta: f32 = rng.random_range(0.0..core::f32::consts::TAU);
    let (c, s) = (libm::cosf(theta), libm::sinf(theta));
    let scale: [f32; 3] = [rng.random_range(0.85..1.15), rng.random_range(0.85..1.15), rng.random_range(0.85..1.15)];
    for p in points {
        let q = [p[0] * scale[0], p[1] * scale[1], p[2] * scale[2]];
        *p = [
            c * q[0] - s * q[1] + noise * standard_normal(rng),
            s * q[0] + c * q[1] + noise * standard_normal(rng),
            q[2] + noise * standard_normal(rng),
        ];
    }
}

pub fn shape_cloud(shape: Shape, points: usize, noise: f32, rng: &mut SeededRng) -> Result<PointCloud> {
    let mut pts: Vec<Point> = (0..points).map(|_| sample_surface(shape, rng)).collect();
    augment(&mut pts, noise, rng);
    PointCloud::new(pts)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShapesSpec {
    pub shapes: Vec<Shape>,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub points: usize,
    pub noise: f32,
    pub seed: u64,
}

impl ShapesSpec {
    /// Sphere / cube / cylinder / torus, 32 train and 32 test clouds per class.
    pub fn four_class(points: usize, seed: u64) -> Self {
        Self { shapes: Shape::ALL.to_vec(), train_per_class: 32, test_per_class: 32, points, noise: 0.01, seed }
    }
}

pub type Labeled = Vec<(PointCloud, usize)>;

/// `(train, test)`; class `i` is `spec.shapes[i]`. Every cloud has its own
/// generator stream, so splits do not depend on each other's sizes.
pub fn shapes_benchmark(spec: &ShapesSpec) -> Result<(Labeled, Labeled)> {
    if spec.shapes.len() < 2 || spec.points == 0 {
        bail!(InvalidArgument, "a benchmark needs at least 2 shapes and 1 point per cloud");
    }
    let make = |split: u64, per: usize| -> Result<Labeled> {
        let mut out = Vec::with_capacity(per * spec.shapes.len());
        for i in 0..per {
            for (label, &shape) in spec.shapes.iter().enumerate() {
                let index = (split << 40) | ((label as u64) << 24) | i as u64;
                let mut rng = rng_for(spec.seed, Stream::Data, index);
                out.push((shape_cloud(shape, spec.points, spec.noise, &mut rng)?, label));
            }
        }
        Ok(out)
    };
    Ok((make(0, spec.train_per_class)?, make(1, spec.test_per_class)?))
}

pub const LAMP_PARTS: usize = 3;

/// A three-part object: base disk (0), stem (1) and spherical head (2), with
/// randomized proportions. Returns the cloud and per-point part labels.
pub fn lamp_cloud(points: usize, noise: f32, rng: &mut SeededRng) -> Result<(PointCloud, Vec<usize>)> {
    let base_r: f32 = rng.random_range(0.4..0.7);
    let stem_h: f32 = rng.random_range(0.8..1.4);
    let head_r: f32 = rng.random_range(0.25..0.45);
    let mut pts = Vec::with_capacity(points);
    let mut labels = Vec::with_capacity(points);
    for _ in 0..points {
        let t: f32 = rng.random_range(0.0..core::f32::consts::TAU);
        let part = rng.random_range(0..LAMP_PARTS);
        let p = match part {
            0 => {
                let r = base_r * Float::sqrt(rng.random_range(0.0..1.0f32));
                [r * libm::cosf(t), r * libm::sinf(t), 0.0]
            }
            1 => [0.06 * libm::cosf(t), 0.06 * libm::sinf(t), rng.random_range(0.0..stem_h)],
            _ => {
                let d = sample_surface(Shape::Sphere, rng);
                [head_r * d[0], head_r * d[1], stem_h + head_r + head_r * d[2]]
            }
        };
        pts.push(p);
        labels.push(part);
    }
    augment(&mut pts, noise, rng);
    Ok((PointCloud::new(pts)?, labels))
}

pub fn lamp_dataset(count: usize, points: usize, seed: u64) -> Result<Vec<(PointCloud, Vec<usize>)>> {
    (0..count).map(|i| lamp_cloud(points, 0.005, &mut rng_for(seed, Stream::Data, (2 << 40) | i as u64))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn benchmark_sizes_and_labels() {
        let (train, test) = shapes_benchmark(&ShapesSpec { train_per_class: 3, test_per_class: 2, ..ShapesSpec::four_class(64, 1) }).unwrap();
        assert_eq!(train.len(), 12);
        assert_eq!(test.len(), 8);
        for l in 0..4 {
            assert_eq!(train.iter().filter(|s| s.1 == l).count(), 3);
        }
        assert!(train.iter().all(|(c, _)| c.len() == 64));
    }

    #[test]
    fn seeded() {
        let spec = ShapesSpec { train_per_class: 2, test_per_class: 1, ..ShapesSpec::four_class(32, 5) };
        assert_eq!(shapes_benchmark(&spec).unwrap(), shapes_benchmark(&spec).unwrap());
    }

    #[test]
    fn surfaces_have_expected_radii() {
        let mut rng = rng_for(0, Stream::Data, 0);
        for _ in 0..200 {
            let p = sample_surface(Shape::Sphere, &mut rng);
            assert!(((p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt() - 1.0).abs() < 1e-5);
            let p = sample_surface(Shape::Cube, &mut rng);
            assert!(p.iter().any(|v| v.abs() == 1.0));
            let p = sample_surface(Shape::Torus, &mut rng);
            let ring = (p[0] * p[0] + p[1] * p[1]).sqrt() - 0.75;
            assert!(((ring * ring + p[2] * p[2]).sqrt() - 0.25).abs() < 1e-4);
        }
    }

    #[test]
    fn lamp_has_every_part() {
        let data = lamp_dataset(2, 256, 3).unwrap();
        for (cloud, labels) in &data {
            assert_eq!(cloud.len(), labels.len());
            for part in 0..LAMP_PARTS {
                assert!(labels.contains(&part));
            }
        }
    }
}
