use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use apf_core::accounting::layout_accounting;
use apf_core::model::{ApfModel, ModelConfig, Task};
use apf_core::train::{evaluate, run_fewshot, train_with, EpochRecord, Metrics, Sample};

use super::{frozen_backbone, load_datasets, RunDir};
use crate::config::RunConfig;
use crate::error::{AppError, AppResult};
use crate::io::checkpoint;

#[derive(Serialize)]
struct HistoryLine {
    epoch: usize,
    step: u64,
    loss: f64,
    accuracy: f64,
    lr: f64,
}

impl From<&EpochRecord> for HistoryLine {
    fn from(r: &EpochRecord) -> Self {
        Self { epoch: r.epoch, step: r.step, loss: r.loss, accuracy: r.accuracy, lr: r.lr }
    }
}

#[derive(Serialize)]
#[serde(untagged)]
enum MetricsLine<'a> {
    Classification { split: &'a str, samples: usize, accuracy: f64 },
    Segmentation { split: &'a str, samples: usize, point_accuracy: f64, miou_c: f64, miou_i: f64, per_part: &'a [Option<f64>] },
}

fn metrics_line<'a>(split: &'a str, samples: usize, m: &'a Metrics) -> MetricsLine<'a> {
    match m {
        Metrics::Classification { accuracy, .. } => MetricsLine::Classification { split, samples, accuracy: *accuracy },
        Metrics::Segmentation(s) => MetricsLine::Segmentation {
            split,
            samples,
            point_accuracy: s.point_accuracy,
            miou_c: s.miou_c,
            miou_i: s.miou_i,
            per_part: &s.per_class,
        },
    }
}

fn summary_header(run: &RunConfig, model: &ApfModel) -> String {
    let acc = layout_accounting(&model.config);
    let mut s = String::new();
    let _ = writeln!(s, "profile      {}", run.profile);
    let _ = writeln!(s, "ablation     {}", run.ablation);
    let _ = writeln!(s, "seed         {}", run.seed);
    let _ = writeln!(s, "frozen       {}", acc.frozen);
    let _ = writeln!(s, "trainable    {}", acc.trainable);
    s
}

fn summary_metrics(s: &mut String, split: &str, samples: usize, m: &Metrics) {
    match m {
        Metrics::Classification { accuracy, .. } => {
            let _ = writeln!(s, "{split:<12} n={samples:<5} accuracy {:.4}", accuracy);
        }
        Metrics::Segmentation(x) => {
            let _ = writeln!(
                s,
                "{split:<12} n={samples:<5} point acc {:.4}  mIoU_C {:.4}  mIoU_I {:.4}",
                x.point_accuracy, x.miou_c, x.miou_i
            );
        }
    }
}

/// Evaluates every non-empty split into `metrics.jsonl` and the summary.
fn write_metrics(dir: &RunDir, model: &ApfModel, splits: &[(&str, &[Sample])], summary: &mut String) -> AppResult<Vec<Metrics>> {
    let mut lines = dir.lines("metrics.jsonl")?;
    let mut out = Vec::new();
    for (name, data) in splits.iter().filter(|(_, d)| !d.is_empty()) {
        let m = evaluate(model, data)?;
        lines.push(&metrics_line(name, data.len(), &m))?;
        summary_metrics(summary, name, data.len(), &m);
        out.push(m);
    }
    lines.finish()?;
    Ok(out)
}

fn fresh_model(run: &RunConfig) -> AppResult<ApfModel> {
    Ok(ApfModel::new(run.model.clone(), frozen_backbone(run)?, run.seed)?)
}

/// Trains from a fresh model, then writes history, metrics, summary and
/// `model.apfw` into `out`. Returns the final metrics per split.
pub fn cmd_train(run: &RunConfig, out: &Path) -> AppResult<Vec<Metrics>> {
    let data = load_datasets(run)?;
    if data.train.is_empty() {
        return Err(AppError::Config("training needs a train split".into()));
    }
    let mut model = fresh_model(run)?;
    let dir = RunDir::create(out, "train", run)?;
    let mut history = dir.lines("history.jsonl")?;
    let mut write_err = None;
    train_with(&mut model, &data.train, &run.train, |r| {
        if write_err.is_none() {
            write_err = history.push(&HistoryLine::from(r)).err();
        }
    })?;
    if let Some(e) = write_err {
        return Err(e);
    }
    history.finish()?;
    model.check_trainable_set()?;
    checkpoint::save_store(&model.store, &dir.file("model.apfw"))?;
    let mut summary = summary_header(run, &model);
    let metrics = write_metrics(&dir, &model, &[("train", &data.train), ("test", &data.test)], &mut summary)?;
    dir.write("summary.txt", summary.as_bytes())?;
    Ok(metrics)
}

/// Evaluates a trained checkpoint, or the freshly initialized model when
/// `checkpoint` is `None`.
pub fn cmd_eval(run: &RunConfig, checkpoint_path: Option<&Path>, out: &Path) -> AppResult<Vec<Metrics>> {
    let data = load_datasets(run)?;
    let model = match checkpoint_path {
        Some(p) => {
            let store = checkpoint::load_store(p).map_err(|e| AppError::Data(format!("{}: {e}", p.display())))?;
            ApfModel::from_store(run.model.clone(), store).map_err(|e| AppError::Config(format!("{}: {e}", p.display())))?
        }
        None => fresh_model(run)?,
    };
    let dir = RunDir::create(out, "eval", run)?;
    let mut summary = summary_header(run, &model);
    let metrics = write_metrics(&dir, &model, &[("train", &data.train), ("test", &data.test)], &mut summary)?;
    dir.write("summary.txt", summary.as_bytes())?;
    Ok(metrics)
}

#[derive(Serialize)]
struct EpisodeLine {
    episode: usize,
    accuracy: f64,
}

#[derive(Serialize)]
struct FewShotLine {
    n_way: usize,
    k_shot: usize,
    repeats: usize,
    mean: f64,
    std: f64,
}

/// N-way K-shot episodes over the union of the configured splits.
pub fn cmd_fewshot(run: &RunConfig, out: &Path) -> AppResult<apf_core::train::FewShotResult> {
    if !matches!(run.model.task, Task::Classification { .. }) {
        return Err(AppError::Config("few-shot runs are classification only".into()));
    }
    let data = load_datasets(run)?;
    let pool: Vec<Sample> = data.train.into_iter().chain(data.test).collect();
    let frozen = frozen_backbone(run)?;
    let build = |n_way: usize, episode: u64| {
        let config = ModelConfig { task: Task::Classification { classes: n_way }, ..run.model.clone() };
        ApfModel::new(config, frozen.clone(), run.seed.wrapping_add(episode))
    };
    let dir = RunDir::create(out, "fewshot", run)?;
    let result = run_fewshot(build, &pool, &run.fewshot, &run.train)?;
    let mut lines = dir.lines("metrics.jsonl")?;
    for (i, a) in result.accuracies.iter().enumerate() {
        lines.push(&EpisodeLine { episode: i, accuracy: *a })?;
    }
    let spec = &run.fewshot;
    lines.push(&FewShotLine { n_way: spec.n_way, k_shot: spec.k_shot, repeats: spec.repeats, mean: result.mean, std: result.std })?;
    lines.finish()?;
    let mut summary = String::new();
    let _ = writeln!(summary, "profile      {}", run.profile);
    let _ = writeln!(summary, "ablation     {}", run.ablation);
    let _ = writeln!(summary, "seed         {}", run.seed);
    let _ = writeln!(summary, "{}-way {}-shot over {} episodes: {:.2} +- {:.2} %", spec.n_way, spec.k_shot, spec.repeats, 100.0 * result.mean, 100.0 * result.std);
    dir.write("summary.txt", summary.as_bytes())?;
    Ok(result)
}
