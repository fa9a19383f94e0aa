//! Subcommand implementations. Each returns the process exit status on
//! success paths that still need a nonzero code (partial preprocessing).

mod inspect;
mod preprocess;
mod run;

pub use inspect::{cmd_inspect, InspectArgs, InspectReport};
pub use preprocess::{cmd_preprocess, PreprocessArgs, PreprocessReport};
pub use run::{cmd_eval, cmd_fewshot, cmd_train};

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use apf_core::autodiff::ParamStore;
use apf_core::backbone::synth_pretrained;
use apf_core::model::{frozen_encoder, prepare, Task};
use apf_core::synthetic::{lamp_dataset, shapes_benchmark, ShapesSpec};
use apf_core::train::Sample;

use crate::config::{BackboneSource, DataSource, RunConfig};
use crate::error::{AppError, AppResult};
use crate::io::{checkpoint, manifest, point_binary, read_cloud};

/// Train and test samples for a run; either split may be empty.
pub struct Datasets {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

/// The frozen encoder, imported from a checkpoint or synthesized.
pub fn frozen_backbone(run: &RunConfig) -> AppResult<ParamStore<f32>> {
    let cfg = &run.model.backbone;
    match &run.backbone_source {
        BackboneSource::Synthetic(seed) => Ok(synth_pretrained(*seed, cfg)?),
        BackboneSource::Checkpoint(path) => {
            let store = checkpoint::load_store(path).map_err(|e| AppError::Data(format!("{}: {e}", path.display())))?;
            let mut frozen = frozen_encoder(&store, cfg).map_err(|e| AppError::Config(format!("{}: {e}", path.display())))?;
            let ids: Vec<_> = frozen.ids().collect();
            for id in ids {
                frozen.set_requires_grad(id, false);
            }
            Ok(frozen)
        }
    }
}

fn sample_from_file(run: &RunConfig, rec: &manifest::ManifestRecord) -> AppResult<Sample> {
    let ctx = |e: String| AppError::Data(format!("{}: {e}", rec.path.display()));
    let point = read_cloud(&rec.path)?;
    if point.cloud.feature_width() != run.model.feature_width {
        return Err(ctx(format!("{} feature channels, model expects {}", point.cloud.feature_width(), run.model.feature_width)));
    }
    let labels = match &run.model.task {
        Task::Classification { classes } => {
            if rec.label >= *classes {
                return Err(ctx(format!("label {} outside the model's {classes} classes", rec.label)));
            }
            vec![rec.label]
        }
        Task::Segmentation(seg) => {
            let parts = match &rec.parts {
                Some(p) => {
                    let text = fs::read_to_string(p).map_err(|e| AppError::Data(format!("{}: {e}", p.display())))?;
                    manifest::parse_part_labels(&text).map_err(|e| AppError::Data(format!("{}: {e}", p.display())))?
                }
                None => return Err(ctx("segmentation needs a part-label file".into())),
            };
            if parts.len() != point.cloud.len() {
                return Err(ctx(format!("{} part labels for {} points", parts.len(), point.cloud.len())));
            }
            if let Some(bad) = parts.iter().find(|&&p| p as usize >= seg.num_parts) {
                return Err(ctx(format!("part label {bad} outside the {} parts", seg.num_parts)));
            }
            parts.into_iter().map(|p| p as usize).collect()
        }
    };
    let prepared = prepare(&point.cloud, &run.model.grouping).map_err(|e| ctx(e.to_string()))?;
    Ok(Sample { prepared, labels })
}

fn load_manifest_split(run: &RunConfig, path: &Path) -> AppResult<Vec<Sample>> {
    let m = manifest::load_manifest(path)?;
    if m.records.is_empty() {
        return Err(AppError::Data(format!("{}: no samples", path.display())));
    }
    let seg = matches!(run.model.task, Task::Segmentation(_));
    if m.is_segmentation() != seg {
        return Err(AppError::Config(format!(
            "{}: manifest is for {}, the model task is not",
            path.display(),
            if seg { "classification" } else { "segmentation" }
        )));
    }
    m.records.iter().map(|r| sample_from_file(run, r)).collect()
}

pub fn load_datasets(run: &RunConfig) -> AppResult<Datasets> {
    let grouping = &run.model.grouping;
    let prep = |cloud: &apf_core::geometry::PointCloud, labels: Vec<usize>| -> AppResult<Sample> {
        Ok(Sample { prepared: prepare(cloud, grouping)?, labels })
    };
    match &run.data {
        DataSource::Manifests { train, test } => {
            if train.is_none() && test.is_none() {
                return Err(AppError::Config("no data: set [data] train/test manifests or `synthetic`".into()));
            }
            let load = |p: &Option<PathBuf>| p.as_deref().map(|p| load_manifest_split(run, p)).transpose();
            Ok(Datasets { train: load(train)?.unwrap_or_default(), test: load(test)?.unwrap_or_default() })
        }
        DataSource::Shapes { points, train_per_class, test_per_class } => {
            let spec = ShapesSpec { train_per_class: *train_per_class, test_per_class: *test_per_class, ..ShapesSpec::four_class(*points, run.seed) };
            let (train, test) = shapes_benchmark(&spec)?;
            let conv = |set: Vec<(apf_core::geometry::PointCloud, usize)>| set.iter().map(|(c, l)| prep(c, vec![*l])).collect::<AppResult<Vec<_>>>();
            Ok(Datasets { train: conv(train)?, test: conv(test)? })
        }
        DataSource::Lamps { points, train, test } => {
            let all = lamp_dataset(train + test, *points, run.seed)?;
            let mut samples = all.into_iter().map(|(c, l)| prep(&c, l)).collect::<AppResult<Vec<_>>>()?;
            let test = samples.split_off(*train);
            Ok(Datasets { train: samples, test })
        }
    }
}

#[derive(Serialize)]
struct Meta<'a> {
    command: &'a str,
    seed: u64,
    profile: &'a str,
    ablation: &'a str,
    deterministic: bool,
    apf_version: &'a str,
    checkpoint_format_version: u32,
    point_format_version: u32,
}

/// An output directory with the resolved config and run metadata.
pub struct RunDir {
    pub path: PathBuf,
}

impl RunDir {
    pub fn create(path: &Path, command: &str, run: &RunConfig) -> AppResult<Self> {
        fs::create_dir_all(path).map_err(|e| AppError::Data(format!("{}: {e}", path.display())))?;
        let dir = Self { path: path.to_path_buf() };
        dir.write("config.toml", crate::config::to_toml(&run.resolved)?.as_bytes())?;
        let meta = Meta {
            command,
            seed: run.seed,
            profile: &run.profile,
            ablation: &run.ablation,
            deterministic: run.train.deterministic,
            apf_version: env!("CARGO_PKG_VERSION"),
            checkpoint_format_version: checkpoint::VERSION,
            point_format_version: point_binary::VERSION,
        };
        dir.write("meta.json", (serde_json::to_string_pretty(&meta)? + "\n").as_bytes())?;
        Ok(dir)
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn write(&self, name: &str, bytes: &[u8]) -> AppResult<()> {
        let p = self.file(name);
        fs::write(&p, bytes).map_err(|e| AppError::Data(format!("{}: {e}", p.display())))
    }

    /// Opens a JSON-lines file for writing.
    pub fn lines(&self, name: &str) -> AppResult<JsonLines> {
        let p = self.file(name);
        let f = fs::File::create(&p).map_err(|e| AppError::Data(format!("{}: {e}", p.display())))?;
        Ok(JsonLines { out: std::io::BufWriter::new(f) })
    }
}

pub struct JsonLines {
    out: std::io::BufWriter<fs::File>,
}

impl JsonLines {
    pub fn push<T: Serialize>(&mut self, record: &T) -> AppResult<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn finish(mut self) -> AppResult<()> {
        self.out.flush()?;
        Ok(())
    }
}
