//! End-to-end assembly: preprocessing, embedding, sequencing, the adapted
//! encoder and a task head, all sharing one parameter store.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use crate::autodiff::{Graph, NodeId, ParamId, ParamStore};
use crate::backbone::{encode, AdapterParams, Backbone, BackboneConfig, BackboneWeights, EncodeOptions};
use crate::embed::{point_embed_forward, EmbedConfig, PointEmbedNet};
use crate::error::{bail, Result};
use crate::geometry::{
    farthest_point_sample, knn_group, normalize_unit_sphere, GroupedPoints, MortonConfig, PointCloud, StartRule, DEFAULT_BITS,
};
use crate::heads::{classify_logits, segment_forward, ClassifierHead, SegHeadConfig, SegmentationHead};
use crate::rng::{rng_for, Stream};
use crate::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GroupingConfig {
    pub n_s: usize,
    pub k: usize,
    pub morton_bits: u32,
}

impl Default for GroupingConfig {
    fn default() -> Self {
        Self { n_s: 128, k: 32, morton_bits: DEFAULT_BITS }
    }
}

/// A normalized cloud with its groups and Morton order, ready for any model
/// sharing the grouping geometry.
#[derive(Clone, Debug, PartialEq)]
pub struct Prepared {
    pub cloud: PointCloud,
    pub grouped: GroupedPoints,
}

/// normalize -> canonical FPS -> kNN -> Morton order over `[-1, 1]^3`.
pub fn prepare(cloud: &PointCloud, grouping: &GroupingConfig) -> Result<Prepared> {
    let cloud = normalize_unit_sphere(cloud)?;
    let centroids = farthest_point_sample(&cloud, grouping.n_s, StartRule::Canonical)?;
    let mut grouped = knn_group(&cloud, &centroids, grouping.k)?;
    grouped.sequence(&cloud, &MortonConfig::unit(grouping.morton_bits)?)?;
    Ok(Prepared { cloud, grouped })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum EmbeddingKind {
    /// Trainable embedding network.
    #[default]
    PointNet,
    /// Randomly initialized and frozen.
    Rpn,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Task {
    Classification { classes: usize },
    Segmentation(SegHeadConfig),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub grouping: GroupingConfig,
    pub feature_width: usize,
    pub embed_hidden: Vec<usize>,
    pub embedding: EmbeddingKind,
    /// Reorder tokens by Morton code; identity order otherwise.
    pub sequencer: bool,
    pub adapters: bool,
    pub task: Task,
}

impl ModelConfig {
    pub fn classification(backbone: BackboneConfig, grouping: GroupingConfig, classes: usize) -> Self {
        Self {
            backbone,
            grouping,
            feature_width: 0,
            embed_hidden: crate::embed::DEFAULT_HIDDEN.to_vec(),
            embedding: EmbeddingKind::PointNet,
            sequencer: true,
            adapters: true,
            task: Task::Classification { classes },
        }
    }

    pub fn embed_config(&self) -> EmbedConfig {
        EmbedConfig { feature_width: self.feature_width, hidden: self.embed_hidden.clone(), out_width: self.backbone.width }
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        let g = &self.grouping;
        if g.n_s == 0 || g.k == 0 {
            bail!(Config, "n_s and k must be positive");
        }
        if !(1..=21).contains(&g.morton_bits) {
            bail!(Config, "morton bits {} outside 1..=21", g.morton_bits);
        }
        if self.backbone.use_pos_embed && g.n_s + 1 > self.backbone.max_tokens {
            bail!(Config, "{} groups plus the class token exceed {} positions", g.n_s, self.backbone.max_tokens);
        }
        match &self.task {
            Task::Classification { classes } if *classes < 2 => bail!(Config, "need at least 2 classes"),
            Task::Segmentation(seg) => seg.validate(self.backbone.layers)?,
            _ => {}
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Head {
    Classifier(ClassifierHead),
    Segmentation(SegmentationHead),
}

impl Head {
    pub fn params(&self) -> Vec<ParamId> {
        match self {
            Head::Classifier(h) => h.params().to_vec(),
            Head::Segmentation(h) => h.params().collect(),
        }
    }
}

/// Parameter handles of every module; valid for any store with the same layout
/// (including a `cast` of the owning store).
#[derive(Clone, Debug, PartialEq)]
pub struct Modules {
    pub embed: PointEmbedNet,
    pub backbone: Backbone,
    pub head: Head,
}

impl Modules {
    /// The tensors that must (and alone may) be trainable.
    pub fn expected_trainable(&self) -> BTreeSet<ParamId> {
        let mut set: BTreeSet<ParamId> = self.backbone.adapters.iter().flat_map(|a| a.params()).collect();
        if self.embed.is_trainable() {
            set.extend(self.embed.params());
        }
        set.extend(self.head.params());
        set
    }

    /// Task output for one sample: `[1, classes]` logits or `[N, parts]` point logits.
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, config: &ModelConfig, sample: &Prepared) -> Result<NodeId> {
        let grouped = &sample.grouped;
        let tokens = point_embed_forward(&self.embed, g, &sample.cloud, grouped)?;
        let identity: Vec<usize>;
        let order = if config.sequencer {
            if grouped.order.len() != grouped.num_groups() {
                bail!(InvalidArgument, "sample has not been sequenced");
            }
            &grouped.order[..]
        } else {
            identity = (0..grouped.num_groups()).collect();
            &identity[..]
        };
        let tokens = if config.sequencer { g.embedding_lookup(tokens, order)? } else { tokens };
        let segmenting = matches!(self.head, Head::Segmentation(_));
        let enc = encode(g, &self.backbone, tokens, EncodeOptions { adapters: config.adapters, capture: segmenting })?;
        match &self.head {
            Head::Classifier(h) => {
                let cls = g.embedding_lookup(enc.sequence, &[0])?;
                classify_logits(g, h, cls)
            }
            Head::Segmentation(h) => segment_forward(g, h, &enc.per_block, order, grouped, &sample.cloud),
        }
    }

    /// Mean cross-entropy of one sample; `labels` holds one class or one part per point.
    pub fn loss<T: Real>(&self, g: &mut Graph<'_, T>, config: &ModelConfig, sample: &Prepared, labels: &[usize]) -> Result<NodeId> {
        let logits = self.forward(g, config, sample)?;
        let rows = g.shape(logits)[0];
        if labels.len() != rows {
            bail!(InvalidArgument, "{} labels for {} prediction rows", labels.len(), rows);
        }
        g.cross_entropy_with_logits(logits, labels)
    }
}

/// A complete model: configuration, parameters and handles.
#[derive(Clone, Debug)]
pub struct ApfModel {
    pub config: ModelConfig,
    pub store: ParamStore<f32>,
    pub modules: Modules,
}

impl ApfModel {
    /// Adds freshly initialized trainable modules (and the RPN embedding) to a
    /// store that holds only the frozen encoder.
    pub fn new(config: ModelConfig, mut store: ParamStore<f32>, seed: u64) -> Result<Self> {
        config.validate()?;
        let weights = BackboneWeights::bind(&store, &config.backbone)?;
        if store.len() != weights.params().count() {
            bail!(Config, "pretrained store carries {} extra tensors", store.len() - weights.params().count());
        }
        let embed = match config.embedding {
            EmbeddingKind::PointNet => PointEmbedNet::init(&mut store, config.embed_config(), &mut rng_for(seed, Stream::Init, 0), true)?,
            EmbeddingKind::Rpn => PointEmbedNet::init_random_frozen(&mut store, config.embed_config(), seed)?,
        };
        let mut adapters = Vec::new();
        if config.adapters {
            for l in 0..config.backbone.layers {
                adapters.push(AdapterParams::init(&mut store, &config.backbone, l, &mut rng_for(seed, Stream::Init, 1 + l as u64))?);
            }
        }
        let mut rng = rng_for(seed, Stream::Init, 1 << 20);
        let head = match &config.task {
            Task::Classification { classes } => Head::Classifier(ClassifierHead::init(&mut store, config.backbone.width, *classes, &mut rng)?),
            Task::Segmentation(seg) => Head::Segmentation(SegmentationHead::init(
                &mut store,
                seg.clone(),
                config.backbone.width,
                config.backbone.layers,
                &mut rng,
            )?),
        };
        let backbone = Backbone { config: config.backbone.clone(), weights, adapters };
        let model = Self { config, store, modules: Modules { embed, backbone, head } };
        model.check_trainable_set()?;
        Ok(model)
    }

    /// Binds a complete store (e.g. a loaded checkpoint) to `config`.
    pub fn from_store(config: ModelConfig, store: ParamStore<f32>) -> Result<Self> {
        config.validate()?;
        let weights = BackboneWeights::bind(&store, &config.backbone)?;
        let embed = PointEmbedNet::bind(&store, config.embed_config())?;
        if embed.is_trainable() != (config.embedding == EmbeddingKind::PointNet) {
            bail!(Config, "embedding trainable flag does not match the configured embedding kind");
        }
        let adapters = if config.adapters {
            (0..config.backbone.layers).map(|l| AdapterParams::bind(&store, &config.backbone, l)).collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        let head = match &config.task {
            Task::Classification { classes } => Head::Classifier(ClassifierHead::bind(&store, config.backbone.width, *classes)?),
            Task::Segmentation(seg) => {
                Head::Segmentation(SegmentationHead::bind(&store, seg.clone(), config.backbone.width, config.backbone.layers)?)
            }
        };
        let backbone = Backbone { config: config.backbone.clone(), weights, adapters };
        let modules = Modules { embed, backbone, head };
        let known = modules.backbone.params().count() + modules.embed.params().count() + modules.head.params().len();
        if known != store.len() {
            bail!(Config, "store has {} tensors the configuration does not use", store.len() - known);
        }
        let model = Self { config, store, modules };
        model.check_trainable_set()?;
        Ok(model)
    }

    /// Fails unless the trainable tensors are exactly adapters, embedding (unless
    /// RPN) and head.
    pub fn check_trainable_set(&self) -> Result<()> {
        let actual: BTreeSet<ParamId> = self.store.trainable().collect();
        let expected = self.modules.expected_trainable();
        if actual != expected {
            let names: Vec<String> = actual.symmetric_difference(&expected).map(|&id| self.store.name(id).into()).collect();
            bail!(Internal, "trainable set mismatch on {:?}", names);
        }
        Ok(())
    }

    /// Inference logits for one sample, row-major.
    pub fn predict(&self, sample: &Prepared) -> Result<Vec<f32>> {
        let mut g = Graph::inference(&self.store);
        let out = self.modules.forward(&mut g, &self.config, sample)?;
        Ok(g.value(out).to_vec())
    }

    pub fn prepare(&self, cloud: &PointCloud) -> Result<Prepared> {
        prepare(cloud, &self.config.grouping)
    }

    /// Number of output columns (classes or parts).
    pub fn outputs(&self) -> usize {
        match &self.config.task {
            Task::Classification { classes } => *classes,
            Task::Segmentation(seg) => seg.num_parts,
        }
    }
}

/// Store restricted to the frozen encoder tensors of `config`, e.g. to start a
/// fresh model from a trained one.
pub fn frozen_encoder(store: &ParamStore<f32>, config: &BackboneConfig) -> Result<ParamStore<f32>> {
    let weights = BackboneWeights::bind(store, config)?;
    let mut out = ParamStore::new();
    for id in weights.params() {
        out.insert(store.name(id), store.get(id).clone())?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::synth_pretrained;

    fn small() -> ModelConfig {
        let mut b = BackboneConfig::tiny();
        b.layers = 2;
        ModelConfig::classification(b, GroupingConfig { n_s: 4, k: 4, morton_bits: 10 }, 3)
    }

    fn cloud() -> PointCloud {
        PointCloud::new((0..16).map(|i| {
            let t = i as f32 * 0.7;
            [t.sin(), (1.3 * t).cos(), 0.1 * i as f32]
        }).collect()).unwrap()
    }

    #[test]
    fn trainable_set_per_ablation() {
        let cfg = small();
        let m = ApfModel::new(cfg.clone(), synth_pretrained(3, &cfg.backbone).unwrap(), 1).unwrap();
        // 2 adapters x 4 + 6 embedding + 2 head
        assert_eq!(m.store.trainable().count(), 16);
        let mut rpn = cfg.clone();
        rpn.embedding = EmbeddingKind::Rpn;
        let m = ApfModel::new(rpn, synth_pretrained(3, &cfg.backbone).unwrap(), 1).unwrap();
        assert_eq!(m.store.trainable().count(), 10);
        let mut bare = cfg.clone();
        bare.adapters = false;
        let m = ApfModel::new(bare, synth_pretrained(3, &cfg.backbone).unwrap(), 1).unwrap();
        assert_eq!(m.store.trainable().count(), 8);
    }

    #[test]
    fn predicts_one_row_of_logits() {
        let cfg = small();
        let m = ApfModel::new(cfg.clone(), synth_pretrained(3, &cfg.backbone).unwrap(), 1).unwrap();
        let p = m.prepare(&cloud()).unwrap();
        let logits = m.predict(&p).unwrap();
        assert_eq!(logits.len(), 3);
        assert!(logits.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn rebinding_round_trips() {
        let cfg = small();
        let m = ApfModel::new(cfg.clone(), synth_pretrained(3, &cfg.backbone).unwrap(), 1).unwrap();
        let again = ApfModel::from_store(cfg.clone(), m.store.clone()).unwrap();
        let p = m.prepare(&cloud()).unwrap();
        assert_eq!(m.predict(&p).unwrap(), again.predict(&p).unwrap());
        let mut wrong = cfg;
        wrong.embedding = EmbeddingKind::Rpn;
        assert!(ApfModel::from_store(wrong, m.store).is_err());
    }

    #[test]
    fn token_overflow_is_a_config_error() {
        let mut cfg = small();
        cfg.grouping.n_s = 300;
        assert!(matches!(cfg.validate(), Err(crate::Error::Config(_))));
    }
}
