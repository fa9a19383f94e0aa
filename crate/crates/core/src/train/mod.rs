//! Optimization, metrics and the few-shot protocol.

mod fewshot;
mod metrics;
mod optim;
mod schedule;
mod trainer;

pub use fewshot::{run_fewshot, sample_fewshot_episode, Episode, EpisodeSpec, FewShotResult, TEST_PER_CLASS};
pub use metrics::{accuracy, instance_ious, mean_std, segmentation_metrics, SegMetrics};
pub use optim::{adamw_step, adamw_update, AdamState, AdamW};
pub use schedule::cosine_lr;
pub use trainer::{evaluate, train, train_classifier, train_with, EpochRecord, History, Metrics, Sample, TrainConfig};
