use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use super::morton::{morton_encode, quantize, MortonConfig};
use super::{check_index, lex_cmp, sq_dist, PointCloud};
use crate::error::{bail, Result};

/// Seed point of farthest point sampling.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum StartRule {
    Index(usize),
    /// Smallest Morton code over the cloud's bounding box, then smallest
    /// coordinates, then smallest index. Makes sampling independent of input order.
    #[default]
    Canonical,
}

/// Codes used for tie-breaking: default bit width over the bounding box.
fn tie_codes(cloud: &PointCloud) -> Vec<u64> {
    let cfg = MortonConfig::bounding(cloud);
    cloud
        .points()
        .iter()
        .map(|p| morton_encode(quantize(&cfg, p), cfg.bits_per_axis()).expect("quantized within grid"))
        .collect()
}

/// Greedy farthest point sampling; returns `n_s` distinct indices in selection order.
///
/// Each pick after the first maximizes the squared distance to the already
/// selected set. Ties go to the smaller Morton code, then smaller coordinates,
/// then smaller index.
pub fn farthest_point_sample(cloud: &PointCloud, n_s: usize, start: StartRule) -> Result<Vec<usize>> {
    let n = cloud.len();
    if n_s == 0 || n_s > n {
        bail!(InvalidArgument, "sample count {n_s} must be in 1..={n}");
    }
    let pts = cloud.points();
    let codes = tie_codes(cloud);
    // true when candidate `a` beats `b` on the tie-break keys alone
    let tie_less = |a: usize, b: usize| -> Ordering {
        codes[a].cmp(&codes[b]).then_with(|| lex_cmp(&pts[a], &pts[b])).then(a.cmp(&b))
    };

    let first = match start {
        StartRule::Index(i) => {
            check_index(i, n, "start")?;
            i
        }
        StartRule::Canonical => (0..n).min_by(|&a, &b| tie_less(a, b)).expect("non-empty cloud"),
    };

    let mut selected = Vec::with_capacity(n_s);
    let mut taken = vec![false; n];
    let mut min_d = vec![f32::INFINITY; n];
    let mut current = first;
    loop {
        selected.push(current);
        taken[current] = true;
        if selected.len() == n_s {
            break;
        }
        let c = pts[current];
        let mut best: Option<usize> = None;
        for j in 0..n {
            if taken[j] {
                continue;
            }
            let d = sq_dist(&pts[j], &c);
            if d < min_d[j] {
                min_d[j] = d;
            }
            best = match best {
                None => Some(j),
                Some(b) => match min_d[j].total_cmp(&min_d[b]) {
                    Ordering::Greater => Some(j),
                    Ordering::Less => Some(b),
                    Ordering::Equal if tie_less(j, b).is_lt() => Some(j),
                    Ordering::Equal => Some(b),
                },
            };
        }
        current = best.expect("fewer selections than points");
    }
    Ok(selected)
}
