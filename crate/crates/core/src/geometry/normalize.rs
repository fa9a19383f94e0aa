use alloc::vec::Vec;

use num_traits::Float;

use super::{Point, PointCloud};
use crate::error::Result;

/// Centers the cloud at the origin and scales the farthest point to unit norm.
///
/// The centroid is accumulated over per-axis sorted values, so the result is
/// independent of input point order bit for bit. A cloud whose points all
/// coincide maps to the origin.
pub fn normalize_unit_sphere(cloud: &PointCloud) -> Result<PointCloud> {
    let n = cloud.len();
    let mut center = [0f64; 3];
    let mut axis: Vec<f32> = Vec::with_capacity(n);
    for (a, c) in center.iter_mut().enumerate() {
        axis.clear();
        axis.extend(cloud.points().iter().map(|p| p[a]));
        axis.sort_unstable_by(f32::total_cmp);
        *c = axis.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
    }

    let centered: Vec<[f64; 3]> = cloud
        .points()
        .iter()
        .map(|p| [p[0] as f64 - center[0], p[1] as f64 - center[1], p[2] as f64 - center[2]])
        .collect();
    let radius = centered
        .iter()
        .map(|q| Float::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2]))
        .fold(0f64, f64::max);

    let points: Vec<Point> = if radius > 0.0 {
        centered
            .iter()
            .map(|q| [(q[0] / radius) as f32, (q[1] / radius) as f32, (q[2] / radius) as f32])
            .collect()
    } else {
        alloc::vec![[0.0; 3]; n]
    };
    Ok(cloud.replace_points(points))
}
