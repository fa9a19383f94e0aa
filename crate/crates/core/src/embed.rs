//! Lightweight PointNet-style embedding: one token per k-neighborhood.
//!
//! Each group member is featurized as `(xyz, features, xyz - centroid)`,
//! passed through a shared per-point MLP and max-pooled over the group.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{Graph, NodeId, ParamId, ParamStore, Tensor};
use crate::error::{bail, Result};
use crate::geometry::{GroupedPoints, PointCloud};
use crate::rng::{kaiming_uniform, SeededRng};
use crate::Real;

pub const DEFAULT_HIDDEN: [usize; 2] = [64, 128];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EmbedConfig {
    /// Per-point feature channels `C` carried by the cloud.
    pub feature_width: usize,
    pub hidden: Vec<usize>,
    /// Token width; must equal the backbone width.
    pub out_width: usize,
}

impl EmbedConfig {
    pub fn new(feature_width: usize, out_width: usize) -> Self {
        Self { feature_width, hidden: DEFAULT_HIDDEN.to_vec(), out_width }
    }

    pub fn input_width(&self) -> usize {
        3 + self.feature_width + 3
    }

    /// `(fan_in, fan_out)` of every layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut widths = vec![self.input_width()];
        widths.extend(&self.hidden);
        widths.push(self.out_width);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PointEmbedNet {
    config: EmbedConfig,
    layers: Vec<(ParamId, ParamId)>,
    trainable: bool,
}

impl PointEmbedNet {
    /// Registers Kaiming-uniform weights and zero biases under `embed.layers.{i}`.
    pub fn init(store: &mut ParamStore<f32>, config: EmbedConfig, rng: &mut SeededRng, trainable: bool) -> Result<Self> {
        if config.out_width == 0 || config.hidden.iter().any(|&w| w == 0) {
            bail!(Config, "embedding widths must be positive");
        }
        let mut layers = Vec::new();
        for (i, (fan_in, fan_out)) in config.layer_dims().into_iter().enumerate() {
            let w = Tensor::new(vec![fan_in, fan_out], kaiming_uniform(rng, fan_in, fan_in * fan_out), trainable)?;
            let b = Tensor::zeros(vec![fan_out], trainable);
            let wid = store.insert(&format!("embed.layers.{i}.weight"), w)?;
            let bid = store.insert(&format!("embed.layers.{i}.bias"), b)?;
            layers.push((wid, bid));
        }
        Ok(Self { config, layers, trainable })
    }

    /// Random frozen embedding: seeded init, every tensor frozen.
    pub fn init_random_frozen(store: &mut ParamStore<f32>, config: EmbedConfig, seed: u64) -> Result<Self> {
        let mut rng = crate::rng::rng_for(seed, crate::rng::Stream::Init, 0);
        Self::init(store, config, &mut rng, false)
    }

    /// Binds to already-registered `embed.layers.*` tensors.
    pub fn bind<T: Real>(store: &ParamStore<T>, config: EmbedConfig) -> Result<Self> {
        let mut layers = Vec::new();
        let mut trainable = None;
        for (i, (fan_in, fan_out)) in config.layer_dims().into_iter().enumerate() {
            let w = expect_param(store, &format!("embed.layers.{i}.weight"), &[fan_in, fan_out])?;
            let b = expect_param(store, &format!("embed.layers.{i}.bias"), &[fan_out])?;
            for id in [w, b] {
                let flag = store.get(id).requires_grad();
                if *trainable.get_or_insert(flag) != flag {
                    bail!(Config, "embedding tensors mix frozen and trainable flags");
                }
            }
            layers.push((w, b));
        }
        Ok(Self { config, layers, trainable: trainable.unwrap_or(false) })
    }

    pub fn config(&self) -> &EmbedConfig {
        &self.config
    }

    pub fn is_trainable(&self) -> bool {
        self.trainable
    }

    pub fn params(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.layers.iter().flat_map(|&(w, b)| [w, b])
    }

    pub fn out_width(&self) -> usize {
        self.config.out_width
    }

    /// `features` is `[n_groups * k, input_width]`; returns `[n_groups, out_width]`.
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, features: NodeId, n_groups: usize, k: usize) -> Result<NodeId> {
        let mut x = features;
        let last = self.layers.len() - 1;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let (pw, pb) = (g.param(w), g.param(b));
            x = g.matmul(x, pw)?;
            x = g.add(x, pb)?;
            if i < last {
                x = g.relu(x);
            }
        }
        let x = g.reshape(x, &[n_groups, k, self.config.out_width])?;
        g.max_over_axis(x, 1)
    }
}

pub(crate) fn expect_param<T: Real>(store: &ParamStore<T>, name: &str, shape: &[usize]) -> Result<ParamId> {
    let Some(id) = store.id(name) else {
        bail!(Config, "missing tensor {name}");
    };
    if store.get(id).shape() != shape {
        bail!(Config, "tensor {name} has shape {:?}, expected {:?}", store.get(id).shape(), shape);
    }
    Ok(id)
}

/// Row-major `[n_groups * k, 3 + C + 3]` member features, groups in centroid order.
pub fn featurize(cloud: &PointCloud, grouped: &GroupedPoints) -> Vec<f32> {
    let width = 3 + cloud.feature_width() + 3;
    let mut out = Vec::with_capacity(grouped.groups.len() * width);
    for (i, &c) in grouped.centroid_indices.iter().enumerate() {
        let center = cloud.points()[c];
        for &j in grouped.group(i) {
            let p = cloud.points()[j];
            out.extend_from_slice(&p);
            out.extend_from_slice(cloud.feature(j));
            out.extend_from_slice(&[p[0] - center[0], p[1] - center[1], p[2] - center[2]]);
        }
    }
    out
}

/// Embeds every group of `grouped` into one token (rows in centroid order).
pub fn point_embed_forward<T: Real>(
    net: &PointEmbedNet,
    g: &mut Graph<'_, T>,
    cloud: &PointCloud,
    grouped: &GroupedPoints,
) -> Result<NodeId> {
    if cloud.feature_width() != net.config.feature_width {
        bail!(Config, "cloud has {} feature channels, embedding expects {}", cloud.feature_width(), net.config.feature_width);
    }
    let feats = featurize(cloud, grouped);
    let x = g.constant_f32(vec![grouped.num_groups() * grouped.k, net.config.input_width()], &feats)?;
    net.forward(g, x, grouped.num_groups(), grouped.k)
}
