//! Parameter accounting from tensor directories, without materializing data.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::backbone::backbone_layout;
use crate::model::{EmbeddingKind, ModelConfig, Task};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
}

impl TensorSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Every tensor [`crate::model::ApfModel::new`] registers for `config`, in
/// registration order.
pub fn model_layout(config: &ModelConfig) -> Vec<TensorSpec> {
    let spec = |name: String, shape: Vec<usize>, trainable: bool| TensorSpec { name, shape, trainable };
    let mut out: Vec<TensorSpec> = backbone_layout(&config.backbone).into_iter().map(|(n, s)| spec(n, s, false)).collect();
    let embed_trainable = config.embedding == EmbeddingKind::PointNet;
    for (i, (a, b)) in config.embed_config().layer_dims().into_iter().enumerate() {
        out.push(spec(format!("embed.layers.{i}.weight"), vec![a, b], embed_trainable));
        out.push(spec(format!("embed.layers.{i}.bias"), vec![b], embed_trainable));
    }
    if config.adapters {
        let (d, r) = (config.backbone.width, config.backbone.adapter_width);
        for l in 0..config.backbone.layers {
            out.push(spec(format!("adapters.{l}.norm.weight"), vec![d], true));
            out.push(spec(format!("adapters.{l}.norm.bias"), vec![d], true));
            out.push(spec(format!("adapters.{l}.enc.weight"), vec![d, r], true));
            out.push(spec(format!("adapters.{l}.dec.weight"), vec![r, d], true));
        }
    }
    let d = config.backbone.width;
    match &config.task {
        Task::Classification { classes } => {
            out.push(spec("head.weight".into(), vec![d, *classes], true));
            out.push(spec("head.bias".into(), vec![*classes], true));
        }
        Task::Segmentation(seg) => {
            let fan_in = seg.taps.len() * d;
            out.push(spec("seg.fusion.weight".into(), vec![fan_in, seg.fusion_width], true));
            out.push(spec("seg.fusion.bias".into(), vec![seg.fusion_width], true));
            for (i, (a, b)) in seg.point_dims(d).into_iter().enumerate() {
                out.push(spec(format!("seg.mlp.{i}.weight"), vec![a, b], true));
                out.push(spec(format!("seg.mlp.{i}.bias"), vec![b], true));
            }
        }
    }
    out
}

/// Parameter totals, split by role.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Accounting {
    pub frozen: usize,
    pub trainable: usize,
    /// Trainable `W_enc` and `W_dec` entries.
    pub adapter_matrices: usize,
    /// Trainable adapter layer-norm gains and biases.
    pub adapter_norms: usize,
    pub embedding: usize,
    pub head: usize,
    pub tensors: usize,
}

/// Tallies `(name, shape, trainable)` entries by naming convention.
pub fn tally<'a, I>(entries: I) -> Accounting
where
    I: IntoIterator<Item = (&'a str, &'a [usize], bool)>,
{
    let mut acc = Accounting::default();
    for (name, shape, trainable) in entries {
        let n: usize = shape.iter().product();
        acc.tensors += 1;
        if !trainable {
            acc.frozen += n;
            continue;
        }
        acc.trainable += n;
        if name.starts_with("adapters.") {
            if name.ends_with(".enc.weight") || name.ends_with(".dec.weight") {
                acc.adapter_matrices += n;
            } else {
                acc.adapter_norms += n;
            }
        } else if name.starts_with("embed.") {
            acc.embedding += n;
        } else if name.starts_with("head.") || name.starts_with("seg.") {
            acc.head += n;
        }
    }
    acc
}

pub fn layout_accounting(config: &ModelConfig) -> Accounting {
    let layout = model_layout(config);
    tally(layout.iter().map(|t| (t.name.as_str(), t.shape.as_slice(), t.trainable)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::{synth_pretrained, BackboneConfig};
    use crate::heads::SegHeadConfig;
    use crate::model::{ApfModel, GroupingConfig};

    fn matches_store(config: ModelConfig) {
        let store = synth_pretrained(0, &config.backbone).unwrap();
        let model = ApfModel::new(config.clone(), store, 0).unwrap();
        let layout = model_layout(&config);
        assert_eq!(layout.len(), model.store.len());
        for ((_, name, t), spec) in model.store.iter().zip(&layout) {
            assert_eq!(name, spec.name);
            assert_eq!(t.shape(), &spec.shape[..]);
            assert_eq!(t.requires_grad(), spec.trainable);
        }
        let acc = layout_accounting(&config);
        assert_eq!(acc.trainable, model.store.num_params(true));
        assert_eq!(acc.frozen, model.store.num_params(false));
    }

    #[test]
    fn layout_mirrors_construction() {
        let grouping = GroupingConfig { n_s: 8, k: 4, morton_bits: 10 };
        let base = ModelConfig::classification(BackboneConfig::tiny(), grouping, 4);
        matches_store(base.clone());
        matches_store(ModelConfig { embedding: EmbeddingKind::Rpn, ..base.clone() });
        matches_store(ModelConfig { adapters: false, ..base.clone() });
        matches_store(ModelConfig { task: Task::Segmentation(SegHeadConfig::new(4, 3)), ..base });
    }

    #[test]
    fn vit_b_adapters() {
        let config = ModelConfig::classification(BackboneConfig::vit_b(), GroupingConfig::default(), 40);
        let acc = layout_accounting(&config);
        assert_eq!(acc.adapter_matrices, 1_179_648);
        assert_eq!(acc.adapter_norms, 12 * 2 * 768);
        assert_eq!(acc.frozen, config.backbone.frozen_param_count());
    }
}
