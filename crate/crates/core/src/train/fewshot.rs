use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use super::metrics::mean_std;
use super::trainer::{evaluate, train, Sample, TrainConfig};
use crate::error::{bail, Result};
use crate::model::ApfModel;
use crate::rng::{rng_for, Stream};

pub const TEST_PER_CLASS: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EpisodeSpec {
    pub n_way: usize,
    pub k_shot: usize,
    pub test_per_class: usize,
    pub repeats: usize,
    pub seed: u64,
}

impl EpisodeSpec {
    pub fn new(n_way: usize, k_shot: usize, seed: u64) -> Self {
        Self { n_way, k_shot, test_per_class: TEST_PER_CLASS, repeats: 10, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_way < 2 || self.k_shot == 0 || self.repeats == 0 || self.test_per_class == 0 {
            bail!(Config, "episodes need n_way >= 2, k_shot >= 1 and at least one repeat");
        }
        Ok(())
    }
}

/// Dataset indices of one episode. Episode label `j` stands for `classes[j]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Episode {
    pub classes: Vec<usize>,
    /// `(dataset index, episode label)`
    pub train: Vec<(usize, usize)>,
    pub test: Vec<(usize, usize)>,
}

/// Draws the classes, then `k_shot` training and `test_per_class` disjoint
/// test samples per class, seeded by `(spec.seed, episode_index)`.
pub fn sample_fewshot_episode(labels: &[usize], spec: &EpisodeSpec, episode_index: u64) -> Result<Episode> {
    spec.validate()?;
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    if by_class.len() < spec.n_way {
        bail!(InvalidArgument, "{}-way episodes need {} classes, dataset has {}", spec.n_way, spec.n_way, by_class.len());
    }
    let mut rng = rng_for(spec.seed, Stream::Episode, episode_index);
    let mut classes: Vec<usize> = by_class.keys().copied().collect();
    classes.shuffle(&mut rng);
    classes.truncate(spec.n_way);
    let need = spec.k_shot + spec.test_per_class;
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (j, c) in classes.iter().enumerate() {
        let mut members = by_class[c].clone();
        if members.len() < need {
            bail!(InvalidArgument, "class {c} has {} samples, an episode needs {need}", members.len());
        }
        members.shuffle(&mut rng);
        train.extend(members[..spec.k_shot].iter().map(|&i| (i, j)));
        test.extend(members[spec.k_shot..need].iter().map(|&i| (i, j)));
    }
    Ok(Episode { classes, train, test })
}

#[derive(Clone, Debug, PartialEq)]
pub struct FewShotResult {
    pub accuracies: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

/// Runs `spec.repeats` episodes, each on a fresh model from `build(n_way, episode)`.
/// Sample labels are rewritten to episode labels.
pub fn run_fewshot<B>(mut build: B, data: &[Sample], spec: &EpisodeSpec, cfg: &TrainConfig) -> Result<FewShotResult>
where
    B: FnMut(usize, u64) -> Result<ApfModel>,
{
    let labels: Vec<usize> = data
        .iter()
        .map(|s| match s.labels[..] {
            [l] => Ok(l),
            _ => Err(crate::Error::InvalidArgument("few-shot runs need one class label per sample".into())),
        })
        .collect::<Result<_>>()?;
    let relabel = |pairs: &[(usize, usize)]| -> Vec<Sample> {
        pairs.iter().map(|&(i, l)| Sample { prepared: data[i].prepared.clone(), labels: alloc::vec![l] }).collect()
    };
    let mut accuracies = Vec::with_capacity(spec.repeats);
    for e in 0..spec.repeats as u64 {
        let episode = sample_fewshot_episode(&labels, spec, e)?;
        let mut model = build(spec.n_way, e)?;
        let episode_cfg = TrainConfig { seed: cfg.seed.wrapping_add(e), ..cfg.clone() };
        train(&mut model, &relabel(&episode.train), &episode_cfg)?;
        accuracies.push(evaluate(&model, &relabel(&episode.test))?.accuracy());
    }
    let (mean, std) = mean_std(&accuracies);
    Ok(FewShotResult { accuracies, mean, std })
}
