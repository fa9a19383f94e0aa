//! Trains the tiny profile on the synthetic four-shape benchmark.
//!
//! `cargo run --release -p apf-core --example shapes -- [epochs] [rpn|no-seq|full]`
//! (env: NS, K, PTS, DATA, SEED)

use std::time::Instant;

use apf_core::backbone::{synth_pretrained, BackboneConfig};
use apf_core::model::{prepare, ApfModel, EmbeddingKind, GroupingConfig, ModelConfig};
use apf_core::synthetic::{shapes_benchmark, ShapesSpec};
use apf_core::train::{evaluate, train_with, Sample, TrainConfig};

fn main() -> apf_core::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let epochs = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(60);
    let variant = args.get(2).map(String::as_str).unwrap_or("full");
    let env = |k: &str, d: usize| std::env::var(k).ok().and_then(|v| v.parse().ok()).unwrap_or(d);
    let grouping = GroupingConfig { n_s: env("NS", 16), k: env("K", 8), morton_bits: 10 };
    let mut config = ModelConfig::classification(BackboneConfig::tiny(), grouping, 4);
    match variant {
        "rpn" => config.embedding = EmbeddingKind::Rpn,
        "no-seq" => config.sequencer = false,
        _ => {}
    }
    let (train, test) = shapes_benchmark(&ShapesSpec::four_class(env("PTS", 128), env("DATA", 7) as u64))?;
    let to_samples = |set: Vec<(apf_core::geometry::PointCloud, usize)>| -> apf_core::Result<Vec<Sample>> {
        set.into_iter().map(|(c, l)| Ok(Sample { prepared: prepare(&c, &grouping)?, labels: vec![l] })).collect()
    };
    let (train, test) = (to_samples(train)?, to_samples(test)?);
    let mut model = ApfModel::new(config.clone(), synth_pretrained(11, &config.backbone)?, env("SEED", 3) as u64)?;
    let cfg = TrainConfig { epochs, batch_size: 16, seed: 5, ..TrainConfig::default() };
    let start = Instant::now();
    train_with(&mut model, &train, &cfg, |r| {
        if r.epoch % 10 == 0 || r.epoch == 1 {
            println!("epoch {:>3} loss {:.4} acc {:.3} lr {:.2e} t={:.1}s", r.epoch, r.loss, r.accuracy, r.lr, start.elapsed().as_secs_f64());
        }
    })?;
    let m = evaluate(&model, &test)?;
    if let apf_core::train::Metrics::Classification { predictions, .. } = &m {
        let mut confusion = [[0usize; 4]; 4];
        for (p, s) in predictions.iter().zip(&test) {
            confusion[s.labels[0]][*p] += 1;
        }
        println!("confusion {confusion:?}");
    }
    println!("test accuracy {:.4}", m.accuracy());
    Ok(())
}
