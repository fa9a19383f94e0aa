//! Task heads: a linear classifier over the class token and a dense
//! part-segmentation head fed by intermediate block outputs.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{Graph, NodeId, ParamId, ParamStore, Tensor};
use crate::embed::expect_param;
use crate::error::{bail, Result};
use crate::geometry::{inverse_permutation, GroupedPoints, Point, PointCloud};
use crate::rng::{kaiming_uniform, linear_uniform, SeededRng};
use crate::Real;

/// Interpolation weight offset: `w ~ 1 / (dist^2 + 1e-8)`.
pub const INTERP_EPS: f64 = 1e-8;
/// Centroids blended per point.
pub const INTERP_NEIGHBORS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClassifierHead {
    pub weight: ParamId,
    pub bias: ParamId,
    pub width: usize,
    pub num_classes: usize,
}

impl ClassifierHead {
    pub fn init(store: &mut ParamStore<f32>, width: usize, num_classes: usize, rng: &mut SeededRng) -> Result<Self> {
        if num_classes < 2 {
            bail!(Config, "a classifier needs at least 2 classes, got {num_classes}");
        }
        let w = Tensor::new(vec![width, num_classes], linear_uniform(rng, width, width * num_classes), true)?;
        let weight = store.insert("head.weight", w)?;
        let bias = store.insert("head.bias", Tensor::zeros(vec![num_classes], true))?;
        Ok(Self { weight, bias, width, num_classes })
    }

    pub fn bind<T: Real>(store: &ParamStore<T>, width: usize, num_classes: usize) -> Result<Self> {
        Ok(Self {
            weight: expect_param(store, "head.weight", &[width, num_classes])?,
            bias: expect_param(store, "head.bias", &[num_classes])?,
            width,
            num_classes,
        })
    }

    pub fn params(&self) -> [ParamId; 2] {
        [self.weight, self.bias]
    }
}

/// `logits = cls * W + b` for a `[1, d]` class-token row.
pub fn classify_logits<T: Real>(g: &mut Graph<'_, T>, head: &ClassifierHead, cls: NodeId) -> Result<NodeId> {
    let (w, b) = (g.param(head.weight), g.param(head.bias));
    let y = g.matmul(cls, w)?;
    g.add(y, b)
}

pub fn cross_entropy_loss<T: Real>(g: &mut Graph<'_, T>, logits: NodeId, label: usize) -> Result<NodeId> {
    g.cross_entropy_with_logits(logits, &[label])
}

/// Softmax probabilities of one logit row, evaluated in `f64`.
pub fn probabilities(logits: &[f32]) -> Vec<f32> {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let exps: Vec<f64> = logits.iter().map(|&l| libm::exp(l as f64 - max)).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| (e / sum) as f32).collect()
}

/// Index of the largest logit (first on ties).
pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Blocks at one third, two thirds and the full depth (1-based, deduplicated).
pub fn default_taps(layers: usize) -> Vec<usize> {
    let mut taps = vec![(layers / 3).max(1), (2 * layers / 3).max(1), layers];
    taps.dedup();
    taps
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegHeadConfig {
    /// 1-based block indices whose outputs are fused.
    pub taps: Vec<usize>,
    pub fusion_width: usize,
    pub hidden: Vec<usize>,
    pub num_parts: usize,
}

impl SegHeadConfig {
    pub fn new(layers: usize, num_parts: usize) -> Self {
        Self { taps: default_taps(layers), fusion_width: 128, hidden: vec![64], num_parts }
    }

    pub fn validate(&self, layers: usize) -> Result<()> {
        if self.taps.is_empty() || self.taps.windows(2).any(|w| w[0] >= w[1]) || self.taps[0] == 0 || *self.taps.last().unwrap() > layers {
            bail!(Config, "taps {:?} must be strictly increasing within 1..={layers}", self.taps);
        }
        if self.num_parts < 2 {
            bail!(Config, "segmentation needs at least 2 part labels");
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of the per-point MLP for backbone width `d`.
    pub fn point_dims(&self, d: usize) -> Vec<(usize, usize)> {
        let mut widths = vec![self.fusion_width + d + 3];
        widths.extend(&self.hidden);
        widths.push(self.num_parts);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentationHead {
    pub config: SegHeadConfig,
    pub width: usize,
    pub fusion: (ParamId, ParamId),
    pub mlp: Vec<(ParamId, ParamId)>,
}

impl SegmentationHead {
    pub fn init(store: &mut ParamStore<f32>, config: SegHeadConfig, width: usize, layers: usize, rng: &mut SeededRng) -> Result<Self> {
        config.validate(layers)?;
        let fan_in = config.taps.len() * width;
        let fw = Tensor::new(vec![fan_in, config.fusion_width], kaiming_uniform(rng, fan_in, fan_in * config.fusion_width), true)?;
        let fusion = (
            store.insert("seg.fusion.weight", fw)?,
            store.insert("seg.fusion.bias", Tensor::zeros(vec![config.fusion_width], true))?,
        );
        let mut mlp = Vec::new();
        for (i, (a, b)) in config.point_dims(width).into_iter().enumerate() {
            let w = Tensor::new(vec![a, b], kaiming_uniform(rng, a, a * b), true)?;
            mlp.push((
                store.insert(&format!("seg.mlp.{i}.weight"), w)?,
                store.insert(&format!("seg.mlp.{i}.bias"), Tensor::zeros(vec![b], true))?,
            ));
        }
        Ok(Self { config, width, fusion, mlp })
    }

    pub fn bind<T: Real>(store: &ParamStore<T>, config: SegHeadConfig, width: usize, layers: usize) -> Result<Self> {
        config.validate(layers)?;
        let fan_in = config.taps.len() * width;
        let fusion = (
            expect_param(store, "seg.fusion.weight", &[fan_in, config.fusion_width])?,
            expect_param(store, "seg.fusion.bias", &[config.fusion_width])?,
        );
        let mut mlp = Vec::new();
        for (i, (a, b)) in config.point_dims(width).into_iter().enumerate() {
            mlp.push((
                expect_param(store, &format!("seg.mlp.{i}.weight"), &[a, b])?,
                expect_param(store, &format!("seg.mlp.{i}.bias"), &[b])?,
            ));
        }
        Ok(Self { config, width, fusion, mlp })
    }

    pub fn params(&self) -> impl Iterator<Item = ParamId> + '_ {
        [self.fusion.0, self.fusion.1].into_iter().chain(self.mlp.iter().flat_map(|&(w, b)| [w, b]))
    }
}

/// Dense `[points, centroids]` inverse-distance weights over the nearest
/// [`INTERP_NEIGHBORS`] centroids (ties by smaller centroid index); rows sum to 1.
pub fn interpolation_weights(points: &[Point], centroids: &[Point]) -> Vec<f64> {
    let m = centroids.len();
    let take = INTERP_NEIGHBORS.min(m);
    let mut out = vec![0.0; points.len() * m];
    let mut keyed: Vec<(f64, usize)> = Vec::with_capacity(m);
    for (i, p) in points.iter().enumerate() {
        keyed.clear();
        keyed.extend(centroids.iter().enumerate().map(|(j, c)| {
            let d2: f64 = (0..3).map(|a| (p[a] as f64 - c[a] as f64) * (p[a] as f64 - c[a] as f64)).sum();
            (d2, j)
        }));
        keyed.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let total: f64 = keyed[..take].iter().map(|&(d2, _)| 1.0 / (d2 + INTERP_EPS)).sum();
        for &(d2, j) in &keyed[..take] {
            out[i * m + j] = (1.0 / (d2 + INTERP_EPS)) / total;
        }
    }
    out
}

/// Dense per-point part logits `[N, num_parts]`.
///
/// `per_block` holds every block output (class token in row 0) and `order`
/// the sequencing permutation those tokens were encoded with.
pub fn segment_forward<T: Real>(
    g: &mut Graph<'_, T>,
    head: &SegmentationHead,
    per_block: &[NodeId],
    order: &[usize],
    grouped: &GroupedPoints,
    cloud: &PointCloud,
) -> Result<NodeId> {
    let Some(&last) = head.config.taps.last() else {
        bail!(Config, "segmentation head has no taps");
    };
    if last > per_block.len() {
        bail!(Config, "tap {last} requested but only {} block outputs captured", per_block.len());
    }
    let n_s = grouped.num_groups();
    let inv = inverse_permutation(order)?;
    if inv.len() != n_s {
        bail!(InvalidArgument, "order length {} does not match {n_s} groups", inv.len());
    }
    // token row of centroid c is inv[c] + 1 (row 0 is the class token)
    let rows: Vec<usize> = inv.iter().map(|&i| i + 1).collect();
    let mut tapped = Vec::with_capacity(head.config.taps.len());
    for &t in &head.config.taps {
        tapped.push(g.embedding_lookup(per_block[t - 1], &rows)?);
    }
    let fused = if tapped.len() == 1 { tapped[0] } else { g.concat_lastdim(&tapped)? };
    let (fw, fb) = (g.param(head.fusion.0), g.param(head.fusion.1));
    let fused = g.matmul(fused, fw)?;
    let fused = g.add(fused, fb)?;
    let fused = g.relu(fused);

    let centroids: Vec<Point> = grouped.centroid_indices.iter().map(|&i| cloud.points()[i]).collect();
    let n = cloud.len();
    let weights = interpolation_weights(cloud.points(), &centroids);
    let wm = g.constant(vec![n, n_s], weights.into_iter().map(T::of).collect())?;
    let interp = g.matmul(wm, fused)?;

    let final_rows: Vec<usize> = (1..=n_s).collect();
    let final_tokens = g.embedding_lookup(*per_block.last().expect("non-empty"), &final_rows)?;
    let global = g.mean_over_axis(final_tokens, 0)?;
    let global = g.reshape(global, &[1, head.width])?;
    let global = g.embedding_lookup(global, &vec![0; n])?;
    let xyz: Vec<f32> = cloud.points().iter().flatten().copied().collect();
    let xyz = g.constant_f32(vec![n, 3], &xyz)?;

    let mut x = g.concat_lastdim(&[interp, global, xyz])?;
    let lastl = head.mlp.len() - 1;
    for (i, &(w, b)) in head.mlp.iter().enumerate() {
        let (pw, pb) = (g.param(w), g.param(b));
        x = g.matmul(x, pw)?;
        x = g.add(x, pb)?;
        if i < lastl {
            x = g.relu(x);
        }
    }
    Ok(x)
}
