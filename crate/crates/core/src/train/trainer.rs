use alloc::vec::Vec;

use rand::seq::SliceRandom;

use super::metrics::{accuracy, segmentation_metrics, SegMetrics};
use super::optim::{adamw_step, AdamState, AdamW};
use super::schedule::cosine_lr;
use crate::autodiff::Graph;
use crate::error::{bail, Result};
use crate::heads::argmax;
use crate::model::{ApfModel, Prepared, Task};
use crate::rng::{rng_for, Stream};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr_max: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub adam_epsilon: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Serial, fixed-order reductions. Training is always serial, so this is
    /// recorded for the run metadata rather than switching code paths.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_max: 5e-4,
            lr_min: 0.0,
            weight_decay: 5e-2,
            betas: (0.9, 0.999),
            adam_epsilon: 1e-8,
            epochs: 100,
            batch_size: 16,
            seed: 0,
            deterministic: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_min >= 0.0 && self.lr_max >= self.lr_min && self.lr_max.is_finite()) {
            bail!(Config, "learning rates must satisfy lr_max >= lr_min >= 0");
        }
        if self.epochs == 0 || self.batch_size == 0 {
            bail!(Config, "epochs and batch size must be positive");
        }
        let (b1, b2) = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) || self.adam_epsilon <= 0.0 || self.weight_decay < 0.0 {
            bail!(Config, "invalid optimizer hyperparameters");
        }
        Ok(())
    }

    pub fn optimizer(&self) -> AdamW {
        AdamW { beta1: self.betas.0, beta2: self.betas.1, eps: self.adam_epsilon, weight_decay: self.weight_decay }
    }
}

/// A preprocessed sample with one class label or one part label per point.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub prepared: Prepared,
    pub labels: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Optimizer steps taken so far.
    pub step: u64,
    pub loss: f64,
    /// Training accuracy over the epoch (per point for segmentation).
    pub accuracy: f64,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub records: Vec<EpochRecord>,
}

impl History {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }
}

fn hits(logits: &[f32], cols: usize, labels: &[usize]) -> usize {
    logits.chunks(cols).zip(labels).filter(|(row, &l)| argmax(row) == l).count()
}

/// Trains the model's trainable tensors; `on_epoch` sees each record as it is produced.
pub fn train_with<F: FnMut(&EpochRecord)>(model: &mut ApfModel, data: &[Sample], cfg: &TrainConfig, mut on_epoch: F) -> Result<History> {
    cfg.validate()?;
    if data.is_empty() {
        bail!(InvalidArgument, "training set is empty");
    }
    let hp = cfg.optimizer();
    let steps_per_epoch = data.len().div_ceil(cfg.batch_size) as u64;
    let total = steps_per_epoch * cfg.epochs as u64;
    let cols = model.outputs();
    let mut state = AdamState::new();
    let mut history = History::default();
    let mut step = 0u64;
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng_for(cfg.seed, Stream::Shuffle, epoch as u64));
        let (mut loss_sum, mut hit, mut seen) = (0.0, 0usize, 0usize);
        let mut lr = cfg.lr_max;
        for batch in order.chunks(cfg.batch_size) {
            lr = cosine_lr(step, total, cfg.lr_max, cfg.lr_min)?;
            model.store.zero_grad();
            for &i in batch {
                let sample = &data[i];
                let grads = {
                    let mut g = Graph::new(&model.store);
                    let logits = model.modules.forward(&mut g, &model.config, &sample.prepared)?;
                    if g.shape(logits)[0] != sample.labels.len() {
                        bail!(InvalidArgument, "sample {i} has {} labels for {} rows", sample.labels.len(), g.shape(logits)[0]);
                    }
                    hit += hits(g.value(logits), cols, &sample.labels);
                    seen += sample.labels.len();
                    let loss = g.cross_entropy_with_logits(logits, &sample.labels)?;
                    loss_sum += g.scalar(loss) as f64;
                    g.backward(loss)?
                };
                model.store.accumulate(&grads);
            }
            model.store.scale_grads(1.0 / batch.len() as f32);
            adamw_step(&mut model.store, &mut state, lr, &hp)?;
            step += 1;
        }
        model.store.zero_grad();
        let rec = EpochRecord { epoch: epoch + 1, step, loss: loss_sum / data.len() as f64, accuracy: hit as f64 / seen as f64, lr };
        on_epoch(&rec);
        history.records.push(rec);
    }
    Ok(history)
}

pub fn train(model: &mut ApfModel, data: &[Sample], cfg: &TrainConfig) -> Result<History> {
    train_with(model, data, cfg, |_| {})
}

/// [`train`] restricted to classification models.
pub fn train_classifier(model: &mut ApfModel, data: &[Sample], cfg: &TrainConfig) -> Result<History> {
    if !matches!(model.config.task, Task::Classification { .. }) {
        bail!(InvalidArgument, "train_classifier needs a classification model");
    }
    train(model, data, cfg)
}

#[derive(Clone, Debug, PartialEq)]
pub enum Metrics {
    Classification { accuracy: f64, predictions: Vec<usize> },
    Segmentation(SegMetrics),
}

impl Metrics {
    /// Overall accuracy, or per-point accuracy for segmentation.
    pub fn accuracy(&self) -> f64 {
        match self {
            Metrics::Classification { accuracy, .. } => *accuracy,
            Metrics::Segmentation(m) => m.point_accuracy,
        }
    }
}

pub fn evaluate(model: &ApfModel, data: &[Sample]) -> Result<Metrics> {
    if data.is_empty() {
        bail!(InvalidArgument, "evaluation set is empty");
    }
    let cols = model.outputs();
    match &model.config.task {
        Task::Classification { .. } => {
            let mut predictions = Vec::with_capacity(data.len());
            let mut truth = Vec::with_capacity(data.len());
            for s in data {
                if s.labels.len() != 1 {
                    bail!(InvalidArgument, "classification sample carries {} labels", s.labels.len());
                }
                predictions.push(argmax(&model.predict(&s.prepared)?));
                truth.push(s.labels[0]);
            }
            Ok(Metrics::Classification { accuracy: accuracy(&predictions, &truth)?, predictions })
        }
        Task::Segmentation(seg) => {
            let mut pairs = Vec::with_capacity(data.len());
            for s in data {
                let logits = model.predict(&s.prepared)?;
                if logits.len() != cols * s.labels.len() {
                    bail!(InvalidArgument, "segmentation sample labels do not cover every point");
                }
                pairs.push((logits.chunks(cols).map(argmax).collect(), s.labels.clone()));
            }
            Ok(Metrics::Segmentation(segmentation_metrics(&pairs, seg.num_parts)?))
        }
    }
}
