use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::error::{bail, Result};

/// Fraction of equal entries.
pub fn accuracy(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    if predicted.len() != truth.len() || truth.is_empty() {
        bail!(InvalidArgument, "accuracy over {} predictions and {} labels", predicted.len(), truth.len());
    }
    let hits = predicted.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Per-part IoU of one instance; `None` where a part is absent from both.
pub fn instance_ious(predicted: &[usize], truth: &[usize], num_parts: usize) -> Result<Vec<Option<f64>>> {
    if predicted.len() != truth.len() {
        bail!(InvalidArgument, "{} predictions for {} points", predicted.len(), truth.len());
    }
    let mut inter = vec![0usize; num_parts];
    let mut union = vec![0usize; num_parts];
    for (&p, &t) in predicted.iter().zip(truth) {
        if p >= num_parts || t >= num_parts {
            bail!(InvalidArgument, "part label {} outside 0..{num_parts}", p.max(t));
        }
        if p == t {
            inter[p] += 1;
            union[p] += 1;
        } else {
            union[p] += 1;
            union[t] += 1;
        }
    }
    Ok(inter.iter().zip(&union).map(|(&i, &u)| (u > 0).then(|| i as f64 / u as f64)).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegMetrics {
    /// Mean IoU of each part over the instances where it occurs.
    pub per_class: Vec<Option<f64>>,
    /// Mean over part classes.
    pub miou_c: f64,
    /// Mean over instances.
    pub miou_i: f64,
    pub point_accuracy: f64,
}

/// Aggregates `(predicted, truth)` point-label pairs of every instance.
pub fn segmentation_metrics(instances: &[(Vec<usize>, Vec<usize>)], num_parts: usize) -> Result<SegMetrics> {
    if instances.is_empty() {
        bail!(InvalidArgument, "no instances to evaluate");
    }
    let mut sums = vec![(0.0, 0usize); num_parts];
    let mut inst_means = Vec::with_capacity(instances.len());
    let (mut hits, mut points) = (0usize, 0usize);
    for (pred, truth) in instances {
        let ious = instance_ious(pred, truth, num_parts)?;
        let present: Vec<f64> = ious.iter().flatten().copied().collect();
        if !present.is_empty() {
            inst_means.push(present.iter().sum::<f64>() / present.len() as f64);
        }
        for (s, iou) in sums.iter_mut().zip(&ious) {
            if let Some(v) = iou {
                s.0 += v;
                s.1 += 1;
            }
        }
        hits += pred.iter().zip(truth).filter(|(a, b)| a == b).count();
        points += truth.len();
    }
    let per_class: Vec<Option<f64>> = sums.iter().map(|&(s, n)| (n > 0).then(|| s / n as f64)).collect();
    let seen: Vec<f64> = per_class.iter().flatten().copied().collect();
    Ok(SegMetrics {
        miou_c: mean_std(&seen).0,
        miou_i: mean_std(&inst_means).0,
        per_class,
        point_accuracy: if points == 0 { 0.0 } else { hits as f64 / points as f64 },
    })
}

/// Mean and population standard deviation; `(0, 0)` for an empty slice.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    if values.iter().all(|&v| v == values[0]) {
        return (values[0], 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, Float::sqrt(var))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let t = vec![0, 1, 1, 2];
        assert_eq!(accuracy(&t, &t).unwrap(), 1.0);
        let m = segmentation_metrics(&[(t.clone(), t)], 3).unwrap();
        assert_eq!(m.miou_c, 1.0);
        assert_eq!(m.miou_i, 1.0);
    }

    #[test]
    fn half_swapped_binary_parts() {
        let truth = vec![0, 0, 0, 0, 1, 1, 1, 1];
        let pred = vec![0, 0, 1, 1, 1, 1, 0, 0];
        let ious = instance_ious(&pred, &truth, 2).unwrap();
        for iou in ious {
            assert!((iou.unwrap() - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn disjoint_and_absent_parts() {
        let ious = instance_ious(&[1, 1], &[0, 0], 3).unwrap();
        assert_eq!(ious, vec![Some(0.0), Some(0.0), None]);
    }

    #[test]
    fn instance_and_class_means_differ() {
        let a = (vec![0, 0], vec![0, 0]);
        let b = (vec![0, 1], vec![1, 1]);
        let m = segmentation_metrics(&[a, b], 2).unwrap();
        // part 0: (1 + 0) / 2; part 1: 0.5
        assert!((m.miou_c - 0.5).abs() < 1e-12);
        // instance a: 1; instance b: (0 + 0.5) / 2
        assert!((m.miou_i - 0.625).abs() < 1e-12);
    }

    #[test]
    fn population_std() {
        assert_eq!(mean_std(&[0.7]), (0.7, 0.0));
        let (m, s) = mean_std(&[0.9, 1.0]);
        assert!((m - 0.95).abs() < 1e-12 && (s - 0.05).abs() < 1e-12);
        assert_eq!(mean_std(&[0.8, 0.8, 0.8]).1, 0.0);
    }
}
