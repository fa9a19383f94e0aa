//! Z-order codes: bit `i` of x goes to position `3i`, of y to `3i + 1`, of z to `3i + 2`.

use alloc::vec::Vec;

use super::{Point, PointCloud};
use crate::error::{bail, Result};

pub const DEFAULT_BITS: u32 = 10;
const MAX_BITS: u32 = 21;

/// Quantization grid for Morton encoding.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MortonConfig {
    bits: u32,
    min: Point,
    max: Point,
}

impl MortonConfig {
    /// `min == max` on an axis is accepted; that axis then quantizes to 0.
    pub fn new(bits_per_axis: u32, min: Point, max: Point) -> Result<Self> {
        if !(1..=MAX_BITS).contains(&bits_per_axis) {
            bail!(InvalidArgument, "bits per axis must be in 1..={MAX_BITS}, got {bits_per_axis}");
        }
        for a in 0..3 {
            if !(min[a].is_finite() && max[a].is_finite()) || min[a] > max[a] {
                bail!(InvalidArgument, "bad box on axis {a}: [{}, {}]", min[a], max[a]);
            }
        }
        Ok(Self { bits: bits_per_axis, min, max })
    }

    /// The `[-1, 1]^3` box that contains every normalized cloud.
    pub fn unit(bits_per_axis: u32) -> Result<Self> {
        Self::new(bits_per_axis, [-1.0; 3], [1.0; 3])
    }

    /// Default-width grid over the cloud's bounding box.
    pub fn bounding(cloud: &PointCloud) -> Self {
        let (min, max) = cloud.bounds();
        Self { bits: DEFAULT_BITS, min, max }
    }

    pub fn bits_per_axis(&self) -> u32 {
        self.bits
    }

    pub fn min(&self) -> Point {
        self.min
    }

    pub fn max(&self) -> Point {
        self.max
    }
}

/// Grid cell of `p`: `floor((c - min) / (max - min) * (2^B - 1))`, clamped to the grid.
pub fn quantize(config: &MortonConfig, p: &Point) -> [u32; 3] {
    let top = ((1u64 << config.bits) - 1) as f64;
    let mut q = [0u32; 3];
    for a in 0..3 {
        let lo = config.min[a] as f64;
        let span = config.max[a] as f64 - lo;
        if span <= 0.0 {
            continue;
        }
        let t = num_traits::Float::floor((p[a] as f64 - lo) / span * top);
        q[a] = t.clamp(0.0, top) as u32;
    }
    q
}

#[inline]
fn spread_by_3(v: u32) -> u64 {
    let mut x = v as u64 & 0x1f_ffff;
    x = (x | x << 32) & 0x1f_0000_0000_ffff;
    x = (x | x << 16) & 0x1f_0000_ff00_00ff;
    x = (x | x << 8) & 0x100f_00f0_0f00_f00f;
    x = (x | x << 4) & 0x10c3_0c30_c30c_30c3;
    x = (x | x << 2) & 0x1249_2492_4924_9249;
    x
}

pub fn morton_encode(q: [u32; 3], bits: u32) -> Result<u64> {
    if !(1..=MAX_BITS).contains(&bits) {
        bail!(InvalidArgument, "bits per axis must be in 1..={MAX_BITS}, got {bits}");
    }
    if let Some(a) = q.iter().position(|&c| (c as u64) >> bits != 0) {
        bail!(Range, "component {a} = {} does not fit in {bits} bits", q[a]);
    }
    Ok(spread_by_3(q[0]) | spread_by_3(q[1]) << 1 | spread_by_3(q[2]) << 2)
}

/// Permutation sorting `centroids` by ascending Morton code, ties by position.
pub fn morton_order(centroids: &[Point], config: &MortonConfig) -> Result<Vec<usize>> {
    let codes = centroids
        .iter()
        .map(|p| morton_encode(quantize(config, p), config.bits))
        .collect::<Result<Vec<_>>>()?;
    let mut order: Vec<usize> = (0..centroids.len()).collect();
    order.sort_by_key(|&i| (codes[i], i));
    Ok(order)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn single_bit_placement() {
        assert_eq!(morton_encode([0, 0, 0], 10).unwrap(), 0);
        assert_eq!(morton_encode([1, 0, 0], 10).unwrap(), 1);
        assert_eq!(morton_encode([0, 1, 0], 10).unwrap(), 2);
        assert_eq!(morton_encode([0, 0, 1], 10).unwrap(), 4);
        assert_eq!(morton_encode([1, 2, 3], 10).unwrap(), 53);
    }

    #[test]
    fn full_width_corner() {
        let top = (1u32 << 21) - 1;
        assert_eq!(morton_encode([top; 3], 21).unwrap(), (1u64 << 63) - 1);
    }

    #[test]
    fn out_of_range_component() {
        assert!(matches!(morton_encode([1024, 0, 0], 10), Err(crate::Error::Range(_))));
        assert!(morton_encode([0, 0, 0], 22).is_err());
        assert!(morton_encode([0, 0, 0], 0).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(MortonConfig::new(0, [0.0; 3], [1.0; 3]).is_err());
        assert!(MortonConfig::new(22, [0.0; 3], [1.0; 3]).is_err());
        assert!(MortonConfig::new(10, [1.0, 0.0, 0.0], [0.0, 1.0, 1.0]).is_err());
        assert!(MortonConfig::new(10, [0.0; 3], [0.0, 1.0, 1.0]).is_ok());
    }

    #[test]
    fn corner_points_order() {
        let cfg = MortonConfig::new(10, [0.0; 3], [1.0; 3]).unwrap();
        let pts = vec![[1.0, 1.0, 1.0], [0.0, 0.0, 0.0]];
        assert_eq!(quantize(&cfg, &pts[0]), [1023; 3]);
        assert_eq!(morton_order(&pts, &cfg).unwrap(), vec![1, 0]);
    }

    #[test]
    fn sorted_input_gives_identity() {
        let cfg = MortonConfig::unit(10).unwrap();
        let pts = vec![[-1.0, -1.0, -1.0], [0.5, -1.0, -1.0], [-1.0, 0.5, -1.0], [1.0, 1.0, 1.0]];
        assert_eq!(morton_order(&pts, &cfg).unwrap(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn degenerate_axis_quantizes_to_zero() {
        let cfg = MortonConfig::new(4, [0.0, 0.0, 2.0], [1.0, 1.0, 2.0]).unwrap();
        assert_eq!(quantize(&cfg, &[1.0, 0.5, 2.0]), [15, 7, 0]);
    }

    #[test]
    fn outside_box_clamps() {
        let cfg = MortonConfig::unit(3).unwrap();
        assert_eq!(quantize(&cfg, &[-5.0, 5.0, 0.0]), [0, 7, 3]);
    }
}
