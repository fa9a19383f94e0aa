//! Run configuration: a TOML file with `[geometry]`, `[backbone]`, `[model]`,
//! `[train]`, `[data]` and `[fewshot]` sections, overlaid by command-line flags.
//! Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use apf_core::backbone::BackboneConfig;
use apf_core::heads::{default_taps, SegHeadConfig};
use apf_core::model::{EmbeddingKind, GroupingConfig, ModelConfig, Task};
use apf_core::train::{EpisodeSpec, TrainConfig, TEST_PER_CLASS};

use crate::error::{AppError, AppResult};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    #[serde(default)]
    pub geometry: GeometrySection,
    #[serde(default)]
    pub backbone: BackboneSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub fewshot: FewshotSection,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySection {
    pub n_s: Option<usize>,
    pub k: Option<usize>,
    pub morton_bits: Option<u32>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneSection {
    pub profile: Option<String>,
    pub layers: Option<usize>,
    pub width: Option<usize>,
    pub heads: Option<usize>,
    pub mlp_ratio: Option<usize>,
    pub adapter_width: Option<usize>,
    pub adapter_scale: Option<f32>,
    pub use_pos_embed: Option<bool>,
    pub max_tokens: Option<usize>,
    /// Frozen weights to import; synthesized from `synth_seed` when absent.
    pub checkpoint: Option<PathBuf>,
    pub synth_seed: Option<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub task: Option<String>,
    pub classes: Option<usize>,
    pub parts: Option<usize>,
    pub embedding: Option<String>,
    pub embed_trainable: Option<bool>,
    pub sequencer: Option<bool>,
    pub adapters: Option<bool>,
    pub feature_width: Option<usize>,
    pub embed_hidden: Option<Vec<usize>>,
    pub taps: Option<Vec<usize>>,
    pub fusion_width: Option<usize>,
    pub seg_hidden: Option<Vec<usize>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub lr_max: Option<f64>,
    pub lr_min: Option<f64>,
    pub weight_decay: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub adam_epsilon: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub deterministic: Option<bool>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// Built-in dataset: `shapes4` or `lamps`.
    pub synthetic: Option<String>,
    pub points: Option<usize>,
    pub train_per_class: Option<usize>,
    pub test_per_class: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FewshotSection {
    pub n_way: Option<usize>,
    pub k_shot: Option<usize>,
    pub repeats: Option<usize>,
    pub test_per_class: Option<usize>,
}

/// Command-line overrides shared by every subcommand.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub profile: Option<String>,
    pub deterministic: bool,
    pub embedding: Option<String>,
    pub sequencer: Option<bool>,
    pub adapters: Option<bool>,
    pub ablation: Option<String>,
    pub lr_max: Option<f64>,
    pub epochs: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum BackboneSource {
    Checkpoint(PathBuf),
    Synthetic(u64),
}

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Manifests { train: Option<PathBuf>, test: Option<PathBuf> },
    Shapes { points: usize, train_per_class: usize, test_per_class: usize },
    Lamps { points: usize, train: usize, test: usize },
}

/// Everything a command needs, fully resolved.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub profile: String,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub backbone_source: BackboneSource,
    pub data: DataSource,
    pub fewshot: EpisodeSpec,
    /// Ablation label recorded in run metadata (`full` when nothing is ablated).
    pub ablation: String,
    /// The resolved configuration in file form, for the run directory.
    pub resolved: FileConfig,
}

fn cfg_err(msg: impl Into<String>) -> AppError {
    AppError::Config(msg.into())
}

pub fn parse_config(text: &str) -> AppResult<FileConfig> {
    toml::from_str(text).map_err(|e| cfg_err(e.to_string()))
}

pub fn load_config(path: &Path) -> AppResult<FileConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| cfg_err(format!("{}: {e}", path.display())))?;
    let mut cfg = parse_config(&text).map_err(|e| cfg_err(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let rebase = |p: &mut Option<PathBuf>| {
        if let Some(p) = p.as_mut().filter(|p| p.is_relative()) {
            *p = base.join(&*p);
        }
    };
    rebase(&mut cfg.backbone.checkpoint);
    rebase(&mut cfg.data.train);
    rebase(&mut cfg.data.test);
    Ok(cfg)
}

pub fn profile(name: &str) -> AppResult<BackboneConfig> {
    match name {
        "tiny" => Ok(BackboneConfig::tiny()),
        "vitb" => Ok(BackboneConfig::vit_b()),
        _ => Err(cfg_err(format!("unknown profile `{name}` (expected tiny or vitb)"))),
    }
}

fn embedding_kind(name: &str) -> AppResult<EmbeddingKind> {
    match name {
        "pointnet" => Ok(EmbeddingKind::PointNet),
        "rpn" => Ok(EmbeddingKind::Rpn),
        _ => Err(cfg_err(format!("unknown embedding `{name}` (expected pointnet or rpn)"))),
    }
}

fn embedding_name(kind: EmbeddingKind) -> &'static str {
    match kind {
        EmbeddingKind::PointNet => "pointnet",
        EmbeddingKind::Rpn => "rpn",
    }
}

/// Merges file values, flags and defaults, and rejects conflicting settings
/// before any compute happens.
pub fn resolve(file: &FileConfig, over: &Overrides) -> AppResult<RunConfig> {
    let seed = over.seed.or(file.seed).unwrap_or(0);
    let profile_name = over.profile.clone().or(file.backbone.profile.clone()).unwrap_or_else(|| "tiny".into());
    let base = profile(&profile_name)?;
    let b = &file.backbone;
    let backbone = BackboneConfig {
        layers: b.layers.unwrap_or(base.layers),
        width: b.width.unwrap_or(base.width),
        heads: b.heads.unwrap_or(base.heads),
        mlp_ratio: b.mlp_ratio.unwrap_or(base.mlp_ratio),
        adapter_width: b.adapter_width.unwrap_or(base.adapter_width),
        adapter_scale: b.adapter_scale.unwrap_or(base.adapter_scale),
        use_pos_embed: b.use_pos_embed.unwrap_or(base.use_pos_embed),
        max_tokens: b.max_tokens.unwrap_or(base.max_tokens),
    };
    let g = &file.geometry;
    let dflt = GroupingConfig::default();
    let grouping = GroupingConfig { n_s: g.n_s.unwrap_or(dflt.n_s), k: g.k.unwrap_or(dflt.k), morton_bits: g.morton_bits.unwrap_or(dflt.morton_bits) };

    // ablation axes: explicit flags, then the named ablation, then the file
    let m = &file.model;
    let mut embedding = m.embedding.as_deref().map(embedding_kind).transpose()?.unwrap_or_default();
    let mut sequencer = m.sequencer.unwrap_or(true);
    let mut adapters = m.adapters.unwrap_or(true);
    let ablation = over.ablation.clone().unwrap_or_else(|| "full".into());
    match ablation.as_str() {
        "full" => {}
        "no-sequencer" => sequencer = false,
        "no-adapter" => adapters = false,
        "rpn" => embedding = EmbeddingKind::Rpn,
        other => return Err(cfg_err(format!("unknown ablation `{other}` (expected no-sequencer, no-adapter or rpn)"))),
    }
    let conflict = |axis: &str| cfg_err(format!("--{axis} contradicts --ablation {ablation}"));
    if let Some(e) = &over.embedding {
        let kind = embedding_kind(e)?;
        if ablation == "rpn" && kind != EmbeddingKind::Rpn {
            return Err(conflict("embedding"));
        }
        embedding = kind;
    }
    if let Some(s) = over.sequencer {
        if ablation == "no-sequencer" && s {
            return Err(conflict("sequencer"));
        }
        sequencer = s;
    }
    if let Some(a) = over.adapters {
        if ablation == "no-adapter" && a {
            return Err(conflict("adapter"));
        }
        adapters = a;
    }
    if embedding == EmbeddingKind::Rpn && m.embed_trainable == Some(true) {
        return Err(cfg_err("a random frozen (rpn) embedding cannot be trainable"));
    }
    if embedding == EmbeddingKind::PointNet && m.embed_trainable == Some(false) {
        return Err(cfg_err("embed_trainable = false requires embedding = \"rpn\""));
    }

    let d = &file.data;
    let task_name = m.task.clone().unwrap_or_else(|| if d.synthetic.as_deref() == Some("lamps") { "segmentation".into() } else { "classification".into() });
    let task = match task_name.as_str() {
        "classification" => Task::Classification { classes: m.classes.unwrap_or(4) },
        "segmentation" => Task::Segmentation(SegHeadConfig {
            taps: m.taps.clone().unwrap_or_else(|| default_taps(backbone.layers)),
            fusion_width: m.fusion_width.unwrap_or(128),
            hidden: m.seg_hidden.clone().unwrap_or_else(|| vec![64]),
            num_parts: m.parts.unwrap_or(apf_core::synthetic::LAMP_PARTS),
        }),
        other => return Err(cfg_err(format!("unknown task `{other}` (expected classification or segmentation)"))),
    };
    let model = ModelConfig {
        backbone,
        grouping,
        feature_width: m.feature_width.unwrap_or(0),
        embed_hidden: m.embed_hidden.clone().unwrap_or_else(|| apf_core::embed::DEFAULT_HIDDEN.to_vec()),
        embedding,
        sequencer,
        adapters,
        task,
    };
    model.validate()?;

    let t = &file.train;
    let td = TrainConfig::default();
    let train = TrainConfig {
        lr_max: over.lr_max.or(t.lr_max).unwrap_or(td.lr_max),
        lr_min: t.lr_min.unwrap_or(td.lr_min),
        weight_decay: t.weight_decay.unwrap_or(td.weight_decay),
        betas: (t.beta1.unwrap_or(td.betas.0), t.beta2.unwrap_or(td.betas.1)),
        adam_epsilon: t.adam_epsilon.unwrap_or(td.adam_epsilon),
        epochs: over.epochs.or(t.epochs).unwrap_or(td.epochs),
        batch_size: t.batch_size.unwrap_or(td.batch_size),
        seed,
        deterministic: over.deterministic || t.deterministic.unwrap_or(true),
    };
    train.validate()?;

    let backbone_source = match &b.checkpoint {
        Some(p) => BackboneSource::Checkpoint(p.clone()),
        None => BackboneSource::Synthetic(b.synth_seed.unwrap_or(seed)),
    };
    let points = d.points.unwrap_or(256);
    let data = match d.synthetic.as_deref() {
        Some(_) if d.train.is_some() || d.test.is_some() => return Err(cfg_err("[data] takes either manifests or `synthetic`, not both")),
        Some("shapes4") => {
            if matches!(model.task, Task::Classification { classes } if classes != 4) {
                return Err(cfg_err("the shapes4 benchmark has 4 classes"));
            }
            DataSource::Shapes { points, train_per_class: d.train_per_class.unwrap_or(32), test_per_class: d.test_per_class.unwrap_or(32) }
        }
        Some("lamps") => {
            if !matches!(&model.task, Task::Segmentation(s) if s.num_parts == apf_core::synthetic::LAMP_PARTS) {
                return Err(cfg_err("the lamps dataset is a 3-part segmentation task"));
            }
            DataSource::Lamps { points, train: d.train_per_class.unwrap_or(32), test: d.test_per_class.unwrap_or(16) }
        }
        Some(other) => return Err(cfg_err(format!("unknown synthetic dataset `{other}` (expected shapes4 or lamps)"))),
        None => DataSource::Manifests { train: d.train.clone(), test: d.test.clone() },
    };
    if matches!(data, DataSource::Shapes { .. } | DataSource::Lamps { .. }) && model.feature_width != 0 {
        return Err(cfg_err("synthetic datasets carry no point features"));
    }

    let f = &file.fewshot;
    let fewshot = EpisodeSpec {
        n_way: f.n_way.unwrap_or(5),
        k_shot: f.k_shot.unwrap_or(10),
        repeats: f.repeats.unwrap_or(10),
        test_per_class: f.test_per_class.unwrap_or(TEST_PER_CLASS),
        seed,
    };
    fewshot.validate()?;

    let resolved = FileConfig {
        seed: Some(seed),
        geometry: GeometrySection { n_s: Some(grouping.n_s), k: Some(grouping.k), morton_bits: Some(grouping.morton_bits) },
        backbone: BackboneSection {
            profile: Some(profile_name.clone()),
            layers: Some(model.backbone.layers),
            width: Some(model.backbone.width),
            heads: Some(model.backbone.heads),
            mlp_ratio: Some(model.backbone.mlp_ratio),
            adapter_width: Some(model.backbone.adapter_width),
            adapter_scale: Some(model.backbone.adapter_scale),
            use_pos_embed: Some(model.backbone.use_pos_embed),
            max_tokens: Some(model.backbone.max_tokens),
            checkpoint: b.checkpoint.clone(),
            synth_seed: match backbone_source {
                BackboneSource::Synthetic(s) => Some(s),
                BackboneSource::Checkpoint(_) => None,
            },
        },
        model: {
            let (classes, parts, taps, fusion_width, seg_hidden) = match &model.task {
                Task::Classification { classes } => (Some(*classes), None, None, None, None),
                Task::Segmentation(s) => (None, Some(s.num_parts), Some(s.taps.clone()), Some(s.fusion_width), Some(s.hidden.clone())),
            };
            ModelSection {
                task: Some(task_name),
                classes,
                parts,
                embedding: Some(embedding_name(model.embedding).into()),
                embed_trainable: Some(model.embedding == EmbeddingKind::PointNet),
                sequencer: Some(model.sequencer),
                adapters: Some(model.adapters),
                feature_width: Some(model.feature_width),
                embed_hidden: Some(model.embed_hidden.clone()),
                taps,
                fusion_width,
                seg_hidden,
            }
        },
        train: TrainSection {
            lr_max: Some(train.lr_max),
            lr_min: Some(train.lr_min),
            weight_decay: Some(train.weight_decay),
            beta1: Some(train.betas.0),
            beta2: Some(train.betas.1),
            adam_epsilon: Some(train.adam_epsilon),
            epochs: Some(train.epochs),
            batch_size: Some(train.batch_size),
            deterministic: Some(train.deterministic),
        },
        data: d.clone(),
        fewshot: FewshotSection {
            n_way: Some(fewshot.n_way),
            k_shot: Some(fewshot.k_shot),
            repeats: Some(fewshot.repeats),
            test_per_class: Some(fewshot.test_per_class),
        },
    };
    Ok(RunConfig { seed, profile: profile_name, model, train, backbone_source, data, fewshot, ablation, resolved })
}

pub fn to_toml(cfg: &FileConfig) -> AppResult<String> {
    toml::to_string(cfg).map_err(|e| AppError::Internal(format!("serializing the resolved config: {e}")))
}
