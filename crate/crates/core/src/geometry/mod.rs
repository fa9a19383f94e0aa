//! Point-cloud preprocessing: normalization, farthest point sampling, kNN
//! grouping and Morton (Z-order) sequencing.
//!
//! Every kernel is a deterministic brute-force routine; all ties are broken
//! by Morton code, then lexicographic coordinates, then index.

mod fps;
mod knn;
mod morton;
mod normalize;
mod order;

use alloc::format;
use alloc::vec::Vec;
use core::cmp::Ordering;

pub use fps::{farthest_point_sample, StartRule};
pub use knn::knn_group;
pub use morton::{morton_encode, morton_order, quantize, MortonConfig, DEFAULT_BITS};
pub use normalize::normalize_unit_sphere;
pub use order::{apply_inverse_order, apply_order, inverse_permutation, is_permutation};

use crate::error::{bail, Result};

pub type Point = [f32; 3];

/// Squared Euclidean distance, the metric used by sampling, grouping and interpolation.
#[inline]
pub fn sq_dist(a: &Point, b: &Point) -> f32 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Lexicographic total order on coordinates.
pub(crate) fn lex_cmp(a: &Point, b: &Point) -> Ordering {
    a[0].total_cmp(&b[0])
        .then(a[1].total_cmp(&b[1]))
        .then(a[2].total_cmp(&b[2]))
}

/// `N` unordered points with optional per-point features of width `C`.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    points: Vec<Point>,
    feature_width: usize,
    features: Vec<f32>,
}

impl PointCloud {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        Self::with_features(points, 0, Vec::new())
    }

    /// `features` is row-major `N x feature_width`.
    pub fn with_features(points: Vec<Point>, feature_width: usize, features: Vec<f32>) -> Result<Self> {
        if points.is_empty() {
            bail!(InvalidInput, "point cloud must contain at least one point");
        }
        if let Some(i) = points.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            bail!(InvalidInput, "point {i} has a non-finite coordinate");
        }
        if features.len() != points.len() * feature_width {
            bail!(
                InvalidInput,
                "feature buffer holds {} values, expected {} x {}",
                features.len(),
                points.len(),
                feature_width
            );
        }
        Ok(Self { points, feature_width, features })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn feature_width(&self) -> usize {
        self.feature_width
    }

    pub fn features(&self) -> &[f32] {
        &self.features
    }

    /// Features of point `i` (empty when the cloud carries none).
    pub fn feature(&self, i: usize) -> &[f32] {
        &self.features[i * self.feature_width..(i + 1) * self.feature_width]
    }

    /// Reorders points and features: output point `i` is input point `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if !is_permutation(perm, self.len()) {
            bail!(InvalidArgument, "not a permutation of 0..{}", self.len());
        }
        let points = perm.iter().map(|&i| self.points[i]).collect();
        let features = perm.iter().flat_map(|&i| self.feature(i).iter().copied()).collect();
        Ok(Self { points, feature_width: self.feature_width, features })
    }

    /// Per-axis `(min, max)` of the coordinates.
    pub fn bounds(&self) -> (Point, Point) {
        let mut lo = self.points[0];
        let mut hi = self.points[0];
        for p in &self.points[1..] {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        (lo, hi)
    }

    pub(crate) fn replace_points(&self, points: Vec<Point>) -> Self {
        debug_assert_eq!(points.len(), self.points.len());
        Self { points, feature_width: self.feature_width, features: self.features.clone() }
    }
}

/// Sampled centroids, their k-neighborhoods and the Morton sequencing permutation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupedPoints {
    pub centroid_indices: Vec<usize>,
    /// Row-major `N_s x k` point indices.
    pub groups: Vec<usize>,
    pub k: usize,
    /// Morton code of each centroid, in centroid order (empty until sequenced).
    pub morton_codes: Vec<u64>,
    /// Sequencing permutation: token `i` is centroid `order[i]` (empty until sequenced).
    pub order: Vec<usize>,
}

impl GroupedPoints {
    pub fn num_groups(&self) -> usize {
        self.centroid_indices.len()
    }

    pub fn group(&self, i: usize) -> &[usize] {
        &self.groups[i * self.k..(i + 1) * self.k]
    }

    /// Computes Morton codes and the ascending-code permutation for the centroids.
    pub fn sequence(&mut self, cloud: &PointCloud, config: &MortonConfig) -> Result<()> {
        let centroids: Vec<Point> = self.centroid_indices.iter().map(|&i| cloud.points()[i]).collect();
        self.morton_codes = centroids
            .iter()
            .map(|p| morton_encode(quantize(config, p), config.bits_per_axis()))
            .collect::<Result<_>>()?;
        self.order = morton_order(&centroids, config)?;
        Ok(())
    }

    /// Checks every structural invariant; used by tests and after deserialization.
    pub fn validate(&self) -> Result<()> {
        let n_s = self.num_groups();
        let mut seen = self.centroid_indices.clone();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            bail!(InvalidInput, "centroid indices are not distinct");
        }
        if self.groups.len() != n_s * self.k {
            bail!(InvalidInput, "group table has {} entries, expected {}", self.groups.len(), n_s * self.k);
        }
        if !self.order.is_empty() {
            if !is_permutation(&self.order, n_s) {
                bail!(InvalidInput, "order is not a permutation of 0..{n_s}");
            }
            if self.morton_codes.len() != n_s {
                bail!(InvalidInput, "{} morton codes for {n_s} groups", self.morton_codes.len());
            }
            if self.order.windows(2).any(|w| self.morton_codes[w[0]] > self.morton_codes[w[1]]) {
                bail!(InvalidInput, "sequenced codes are not non-decreasing");
            }
        }
        Ok(())
    }
}

pub(crate) fn check_index(i: usize, n: usize, what: &str) -> Result<()> {
    if i >= n {
        return Err(crate::Error::InvalidArgument(format!("{what} index {i} out of range for {n} points")));
    }
    Ok(())
}
