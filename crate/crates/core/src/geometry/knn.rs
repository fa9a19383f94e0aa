use alloc::vec::Vec;

use super::{check_index, sq_dist, GroupedPoints, PointCloud};
use crate::error::{bail, Result};

/// Groups the `k` nearest points (centroid included) around each centroid.
///
/// Members are listed by ascending distance, ties by smaller point index.
/// Morton codes and order are left empty; see [`GroupedPoints::sequence`].
pub fn knn_group(cloud: &PointCloud, centroid_indices: &[usize], k: usize) -> Result<GroupedPoints> {
    let n = cloud.len();
    if k == 0 || k > n {
        bail!(InvalidArgument, "neighbor count {k} must be in 1..={n}");
    }
    for &c in centroid_indices {
        check_index(c, n, "centroid")?;
    }
    let pts = cloud.points();
    let mut groups = Vec::with_capacity(centroid_indices.len() * k);
    let mut keyed: Vec<(f32, usize)> = Vec::with_capacity(n);
    for &c in centroid_indices {
        let center = pts[c];
        keyed.clear();
        keyed.extend(pts.iter().enumerate().map(|(j, p)| (sq_dist(p, &center), j)));
        let cmp = |a: &(f32, usize), b: &(f32, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < n {
            keyed.select_nth_unstable_by(k - 1, cmp);
        }
        keyed[..k].sort_unstable_by(cmp);
        groups.extend(keyed[..k].iter().map(|&(_, j)| j));
    }
    Ok(GroupedPoints {
        centroid_indices: centroid_indices.to_vec(),
        groups,
        k,
        morton_codes: Vec::new(),
        order: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_pair_on_a_line() {
        let c = PointCloud::new(vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [3.0, 0.0, 0.0]]).unwrap();
        let g = knn_group(&c, &[0], 2).unwrap();
        assert_eq!(g.group(0), &[0, 1]);
    }

    #[test]
    fn k_one_is_self() {
        let c = PointCloud::new(vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [3.0, 0.0, 0.0]]).unwrap();
        let g = knn_group(&c, &[2, 0, 1], 1).unwrap();
        assert_eq!(g.groups, vec![2, 0, 1]);
    }

    #[test]
    fn distance_ties_prefer_smaller_index() {
        let c = PointCloud::new(vec![[1.0, 0.0, 0.0], [0.0, 0.0, 0.0], [-1.0, 0.0, 0.0]]).unwrap();
        let g = knn_group(&c, &[1], 2).unwrap();
        assert_eq!(g.group(0), &[1, 0]);
    }

    #[test]
    fn bad_arguments() {
        let c = PointCloud::new(vec![[0.0; 3], [1.0; 3]]).unwrap();
        assert!(knn_group(&c, &[0], 3).is_err());
        assert!(knn_group(&c, &[0], 0).is_err());
        assert!(knn_group(&c, &[5], 1).is_err());
    }
}
