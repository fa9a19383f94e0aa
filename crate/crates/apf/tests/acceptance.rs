//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
//!
//! `cargo test -p apf --test acceptance` (release-level optimization comes from
//! the workspace test profile). Criteria 6 and 7 share their training runs.

#[path = "../../core/tests/common/oracles.rs"]
mod oracles;
#[path = "common/fuzz.rs"]
mod fuzz;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::{Command, ExitCode};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use apf::io::checkpoint;
use apf::io::point_binary::{decode_point_binary, encode_point_binary};
use apf_core::autodiff::{finite_diff_check, GradCheckConfig, Graph, ParamStore, Tensor};
use apf_core::backbone::{synth_pretrained, BackboneConfig};
use apf_core::geometry::{farthest_point_sample, knn_group, morton_encode, PointCloud, StartRule};
use apf_core::heads::SegHeadConfig;
use apf_core::model::{prepare, ApfModel, EmbeddingKind, GroupingConfig, ModelConfig, Task};
use apf_core::synthetic::{shapes_benchmark, ShapesSpec, LAMP_PARTS};
use apf_core::train::{adamw_step, adamw_update, cosine_lr, evaluate, train, AdamState, AdamW, Metrics, Sample, TrainConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
    PointCloud::new((0..n).map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect()).unwrap()
}

/// Replaces every zero-initialized `W_dec` with small random values so the
/// adapter branch participates.
fn perturb_decoders(model: &mut ApfModel, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<_> = model.modules.backbone.adapters.iter().map(|a| a.dec).collect();
    for id in ids {
        let n = model.store.get(id).numel();
        let data: Vec<f32> = (0..n).map(|_| rng.random_range(-0.2..0.2)).collect();
        model.store.assign(id, &data).unwrap();
    }
}

fn max_abs_diff(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
}

fn c1_zero_init() -> Check {
    let grouping = GroupingConfig { n_s: 32, k: 16, morton_bits: 10 };
    let cls = ModelConfig::classification(BackboneConfig::tiny(), grouping, 4);
    let seg = ModelConfig { task: Task::Segmentation(SegHeadConfig::new(BackboneConfig::tiny().layers, LAMP_PARTS)), ..cls.clone() };
    let mut worst = 0f32;
    let mut compared = 0usize;
    for config in [cls, seg] {
        let frozen = synth_pretrained(21, &config.backbone).unwrap();
        let adapted = ApfModel::new(config.clone(), frozen.clone(), 8).unwrap();
        let plain = ApfModel::new(ModelConfig { adapters: false, ..config }, frozen, 8).unwrap();
        for (_, name, t) in plain.store.iter() {
            ensure(adapted.store.by_name(name).map(|u| u.data()) == Some(t.data()), || format!("{name} differs between the two models"))?;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let p = prepare(&random_cloud(&mut rng, 256), &grouping).unwrap();
            let (a, b) = (adapted.predict(&p).unwrap(), plain.predict(&p).unwrap());
            worst = worst.max(max_abs_diff(&a, &b));
            compared += a.len();
        }
    }
    ensure(worst == 0.0, || format!("max abs diff {worst:e}"))?;
    Ok(format!("50 inputs x (classification, segmentation), {compared} outputs, max abs diff 0"))
}

fn c2_gradient_audit() -> Check {
    let grouping = GroupingConfig { n_s: 8, k: 8, morton_bits: 10 };
    let backbone = BackboneConfig { layers: 2, max_tokens: 16, ..BackboneConfig::tiny() };
    let config = ModelConfig::classification(backbone, grouping, 3);
    let mut model = ApfModel::new(config.clone(), synth_pretrained(5, &config.backbone).unwrap(), 5).unwrap();
    perturb_decoders(&mut model, 6);
    let sample = prepare(&random_cloud(&mut ChaCha8Rng::seed_from_u64(2), 48), &grouping).unwrap();
    let mut store = model.store.cast::<f64>();
    let modules = model.modules.clone();
    let report = finite_diff_check(&mut store, |g| modules.loss(g, &config, &sample, &[1]), GradCheckConfig::default()).unwrap();
    let trainable = model.store.trainable().count();
    ensure(report.tensors.len() == trainable, || format!("{} of {trainable} trainable tensors audited", report.tensors.len()))?;
    let worst = report.tensors.iter().max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error)).unwrap();
    ensure(report.passed(), || format!("{} max relative error {:e}", worst.name, worst.max_rel_error))?;
    for t in &report.tensors {
        ensure(t.checked > 0, || format!("{} had every probe on a kink", t.name))?;
    }
    Ok(format!(
        "{} tensors, {} probes ({} skipped at kinks), max rel err {:.2e} ({})",
        report.tensors.len(),
        report.checked(),
        report.skipped(),
        report.max_rel_error(),
        worst.name
    ))
}

fn c3_freeze_contract() -> Check {
    let grouping = GroupingConfig { n_s: 16, k: 8, morton_bits: 10 };
    let config = ModelConfig::classification(BackboneConfig::tiny(), grouping, 4);
    let mut model = ApfModel::new(config.clone(), synth_pretrained(9, &config.backbone).unwrap(), 9).unwrap();
    let spec = ShapesSpec { train_per_class: 2, test_per_class: 0, ..ShapesSpec::four_class(64, 9) };
    let data: Vec<Sample> =
        shapes_benchmark(&spec).unwrap().0.into_iter().map(|(c, l)| Sample { prepared: prepare(&c, &grouping).unwrap(), labels: vec![l] }).collect();
    let digest = |m: &ApfModel| -> Vec<(String, bool, Vec<u8>)> {
        m.store
            .iter()
            .map(|(_, name, t)| {
                let bytes: Vec<u8> = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
                (name.to_string(), t.requires_grad(), Sha256::digest(&bytes).to_vec())
            })
            .collect()
    };
    let before = digest(&model);
    let history = train(&mut model, &data, &TrainConfig { epochs: 50, batch_size: 4, seed: 2, ..TrainConfig::default() }).unwrap();
    let steps = history.last().unwrap().step;
    ensure(steps == 100, || format!("{steps} steps"))?;
    let after = digest(&model);
    let (mut frozen, mut trainable) = (0, 0);
    for ((name, flag, h0), (_, _, h1)) in before.iter().zip(&after) {
        if *flag {
            ensure(h0 != h1, || format!("trainable {name} unchanged"))?;
            trainable += 1;
        } else {
            ensure(h0 == h1, || format!("frozen {name} changed"))?;
            frozen += 1;
        }
    }
    Ok(format!("100 steps: {frozen} frozen tensors hash-identical, {trainable} trainable tensors all changed"))
}

fn c4_geometry_oracles() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for t in 0..200 {
        let n = rng.random_range(1..=256);
        let pts = random_cloud(&mut rng, n);
        let n_s = rng.random_range(1..=n.min(64));
        let got = farthest_point_sample(&pts, n_s, StartRule::Canonical).unwrap();
        let want = oracles::fps(pts.points(), n_s);
        ensure(got == want, || format!("FPS cloud {t}: {got:?} vs {want:?}"))?;
        let k = rng.random_range(1..=n.min(32));
        let g = knn_group(&pts, &got, k).unwrap();
        for (i, &c) in got.iter().enumerate() {
            ensure(g.group(i) == oracles::knn(pts.points(), c, k), || format!("kNN cloud {t} centroid {c}"))?;
        }
    }
    ensure(morton_encode([1, 2, 3], 10).unwrap() == 53, || "morton(1,2,3) != 53".into())?;
    for _ in 0..10_000 {
        let bits = rng.random_range(1..=21u32);
        let q = [0; 3].map(|_| rng.random_range(0..1u32 << bits));
        let (got, want) = (morton_encode(q, bits).unwrap(), oracles::morton_string(q, bits));
        ensure(got == want, || format!("morton {q:?}@{bits}: {got} vs {want}"))?;
    }
    Ok("200 clouds (FPS + kNN), 10,000 Morton triples, morton(1,2,3)=53".into())
}

fn c5_permutation_invariance() -> Check {
    let grouping = GroupingConfig { n_s: 32, k: 16, morton_bits: 10 };
    let config = ModelConfig::classification(BackboneConfig::tiny(), grouping, 4);
    let mut model = ApfModel::new(config.clone(), synth_pretrained(3, &config.backbone).unwrap(), 3).unwrap();
    perturb_decoders(&mut model, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0f32;
    for i in 0..50 {
        let cloud = random_cloud(&mut rng, 256);
        let mut sorted: Vec<[u32; 3]> = cloud.points().iter().map(|p| p.map(f32::to_bits)).collect();
        sorted.sort_unstable();
        sorted.dedup();
        ensure(sorted.len() == 256, || format!("cloud {i} has duplicates"))?;
        let mut perm: Vec<usize> = (0..256).collect();
        perm.shuffle(&mut rng);
        let a = model.predict(&prepare(&cloud, &grouping).unwrap()).unwrap();
        let b = model.predict(&prepare(&cloud.permuted(&perm).unwrap(), &grouping).unwrap()).unwrap();
        worst = worst.max(max_abs_diff(&a, &b));
    }
    ensure(worst <= 1e-5, || format!("max logit diff {worst:e}"))?;
    Ok(format!("50 clouds, max logit diff {worst:e}"))
}

/// The pinned desk-scale benchmark: tiny profile, 256 points, 32 groups of 8,
/// 200 epochs, batch 16.
struct Benchmark {
    full: (Metrics, Duration),
    no_sequencer: (Metrics, Duration),
    rpn: (Metrics, Duration),
    test_size: usize,
}

const BENCH_GROUPING: GroupingConfig = GroupingConfig { n_s: 32, k: 8, morton_bits: 10 };

fn bench_run(config: ModelConfig, train_set: &[Sample], test_set: &[Sample]) -> (Metrics, Duration) {
    let start = Instant::now();
    let mut model = ApfModel::new(config.clone(), synth_pretrained(11, &config.backbone).unwrap(), 3).unwrap();
    train(&mut model, train_set, &TrainConfig { epochs: 200, batch_size: 16, seed: 5, ..TrainConfig::default() }).unwrap();
    (evaluate(&model, test_set).unwrap(), start.elapsed())
}

fn benchmark() -> &'static Benchmark {
    static B: OnceLock<Benchmark> = OnceLock::new();
    B.get_or_init(|| {
        let (train_set, test_set) = shapes_benchmark(&ShapesSpec::four_class(256, 7)).unwrap();
        let conv = |v: Vec<(PointCloud, usize)>| -> Vec<Sample> {
            v.into_iter().map(|(c, l)| Sample { prepared: prepare(&c, &BENCH_GROUPING).unwrap(), labels: vec![l] }).collect()
        };
        let (train_set, test_set) = (conv(train_set), conv(test_set));
        let full = ModelConfig::classification(BackboneConfig::tiny(), BENCH_GROUPING, 4);
        Benchmark {
            full: bench_run(full.clone(), &train_set, &test_set),
            rpn: bench_run(ModelConfig { embedding: EmbeddingKind::Rpn, ..full.clone() }, &train_set, &test_set),
            no_sequencer: bench_run(ModelConfig { sequencer: false, ..full }, &train_set, &test_set),
            test_size: test_set.len(),
        }
    })
}

fn correct(m: &Metrics, n: usize) -> usize {
    (m.accuracy() * n as f64).round() as usize
}

fn c6_trainability() -> Check {
    let b = benchmark();
    let (full, rpn) = (b.full.0.accuracy(), b.rpn.0.accuracy());
    let took = b.full.1 + b.rpn.1;
    let detail = format!("full {:.2}% (>= 95), RPN {:.2}% (>= 85), {:.0} s", 100.0 * full, 100.0 * rpn, took.as_secs_f64());
    ensure(full >= 0.95 && rpn >= 0.85, || detail.clone())?;
    ensure(took < Duration::from_secs(600), || format!("{detail}: over 10 min"))?;
    Ok(detail)
}

/// Correct test predictions out of 128 recorded on the first run.
const PINNED: (usize, usize, usize) = (PIN_FULL, PIN_NO_SEQUENCER, PIN_RPN);
const PIN_FULL: usize = 123;
const PIN_NO_SEQUENCER: usize = 122;
const PIN_RPN: usize = 103;

fn c7_ablation_ordering() -> Check {
    let b = benchmark();
    let n = b.test_size;
    let got = (correct(&b.full.0, n), correct(&b.no_sequencer.0, n), correct(&b.rpn.0, n));
    let detail = format!("full {}/{n} >= no-sequencer {}/{n} >= RPN {}/{n}", got.0, got.1, got.2);
    ensure(got.0 >= got.1 && got.1 >= got.2, || detail.clone())?;
    ensure(got == PINNED, || format!("{detail}, pinned {PINNED:?}"))?;
    Ok(format!("{detail} (pinned)"))
}

fn inspect(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_apf")).arg("inspect").args(args).output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("apf inspect {args:?}: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn reported(table: &str, label: &str) -> Result<usize, String> {
    table
        .lines()
        .find_map(|l| l.trim_start().strip_prefix(label).and_then(|rest| rest.trim().parse().ok()))
        .ok_or_else(|| format!("no `{label}` line"))
}

fn c8_accounting() -> Check {
    let vitb = inspect(&["--profile", "vitb"])?;
    let (l, d, r, h, t) = (12usize, 768usize, 64usize, 3072usize, 197usize);
    let adapters = reported(&vitb, "adapter matrices")?;
    ensure(adapters == l * 2 * d * r && adapters == 1_179_648, || format!("ViT-B adapter matrices {adapters}"))?;
    let block = 4 * (d * d + d) + 2 * 2 * d + (d * h + h) + (h * d + d);
    let analytic_frozen = l * block + d + t * d;
    let frozen = reported(&vitb, "frozen")?;
    ensure(frozen == analytic_frozen, || format!("ViT-B frozen {frozen}, analytic {analytic_frozen}"))?;

    let tiny = inspect(&["--profile", "tiny"])?;
    ensure(reported(&tiny, "adapter matrices")? == 4 * 2 * 64 * 8, || "tiny adapter matrices".into())?;

    // a real tiny checkpoint agrees with the layout, and an all-frozen one has no trainable tensors
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = ModelConfig::classification(BackboneConfig::tiny(), GroupingConfig::default(), 4);
    let model = ApfModel::new(config, synth_pretrained(1, &BackboneConfig::tiny()).unwrap(), 1).unwrap();
    let (ckpt, frozen_only) = (dir.path().join("m.apfw"), dir.path().join("f.apfw"));
    checkpoint::save_store(&model.store, &ckpt).map_err(|e| e.to_string())?;
    checkpoint::save_store(&synth_pretrained(1, &BackboneConfig::tiny()).unwrap(), &frozen_only).map_err(|e| e.to_string())?;
    let table = inspect(&["--profile", "tiny", ckpt.to_str().unwrap()])?;
    ensure(reported(&table, "trainable")? == model.store.num_params(true), || "tiny checkpoint trainable total".into())?;
    ensure(reported(&inspect(&[frozen_only.to_str().unwrap()])?, "trainable")? == 0, || "all-frozen trainable total".into())?;
    Ok(format!("ViT-B adapter matrices {adapters}, frozen {frozen} (analytic {analytic_frozen}); tiny 4096"))
}

fn c9_formats() -> Check {
    let config = ModelConfig::classification(BackboneConfig::tiny(), GroupingConfig::default(), 4);
    let model = ApfModel::new(config, synth_pretrained(2, &BackboneConfig::tiny()).unwrap(), 2).unwrap();
    let entries = checkpoint::store_entries(&model.store);
    let (a, b) = (checkpoint::encode_checkpoint(&entries).unwrap(), checkpoint::encode_checkpoint(&entries).unwrap());
    ensure(Sha256::digest(&a) == Sha256::digest(&b), || "checkpoint bytes differ between writes".into())?;
    let back = checkpoint::decode_checkpoint(&a).map_err(|e| e.to_string())?;
    for (x, y) in entries.iter().zip(&back) {
        let same = x.name == y.name
            && x.shape == y.shape
            && x.trainable == y.trainable
            && x.data.iter().map(|v| v.to_bits()).eq(y.data.iter().map(|v| v.to_bits()));
        ensure(same, || format!("checkpoint tensor {} differs", x.name))?;
    }
    ensure(back.len() == entries.len(), || "tensor count".into())?;

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for i in 0..200 {
        let n = rng.random_range(1..300);
        let c = rng.random_range(0..3);
        let pts = (0..n).map(|_| [rng.random::<f32>() * 200.0 - 100.0, rng.random(), rng.random()]).collect();
        let cloud = PointCloud::with_features(pts, c, (0..n * c).map(|_| rng.random()).collect()).unwrap();
        let labels: Vec<u32> = (0..n).map(|_| rng.random()).collect();
        let rec = decode_point_binary(&encode_point_binary(&cloud, &labels).unwrap()).map_err(|e| e.to_string())?;
        let flat = |c: &PointCloud| c.points().iter().flatten().chain(c.features()).map(|v| v.to_bits()).collect::<Vec<_>>();
        ensure(flat(&rec.cloud) == flat(&cloud) && rec.labels == labels, || format!("point file {i} differs"))?;
    }

    let f = fuzz::fuzz_off(10_000, 77);
    ensure(f.crashes == 0 && f.bad_results == 0, || format!("{} crashes, {} unstructured results", f.crashes, f.bad_results))?;
    Ok(format!(
        "{} tensors and 200 point files bit-exact; OFF fuzz {} files: 0 crashes, {} errors, {} parsed",
        entries.len(),
        f.cases,
        f.errors,
        f.parsed
    ))
}

fn c10_schedule_and_optimizer() -> Check {
    for (total, hi, lo) in [(1u64, 5e-4, 0.0), (100, 5e-4, 1e-6), (3917, 0.1, 0.05), (7, 1.0, 1.0)] {
        ensure(cosine_lr(0, total, hi, lo).unwrap() == hi, || format!("lr(0) for T={total}"))?;
        ensure(cosine_lr(total, total, hi, lo).unwrap() == lo, || format!("lr(T) for T={total}"))?;
    }
    // p=1, g=1, lr=0.1, no decay: m_hat = v_hat = 1, p = 1 - 0.1 / (1 + 1e-8)
    let hp = AdamW { weight_decay: 0.0, ..AdamW::default() };
    let (mut p, mut m, mut v) = ([1.0f32], [0.0], [0.0]);
    adamw_update(&mut p, &[1.0], &mut m, &mut v, 1, 0.1, 0.0, &hp).unwrap();
    let e1 = (p[0] as f64 - 0.900_000_001).abs();
    ensure(e1 < 1e-7, || format!("plain first step off by {e1:e}"))?;

    // through the store: a [1, 1] matrix decays, a [1] bias does not.
    // p=1, g=0.5, lr=1e-3, wd=0.05: m_hat=0.5, v_hat=0.25,
    // matrix 1 - 1e-3*0.05 - 1e-3*0.5/(0.5+1e-8) = 0.99895000002, bias 0.99900000002
    let mut store = ParamStore::<f32>::new();
    let w = store.insert("w", Tensor::new(vec![1, 1], vec![1.0], true).unwrap()).unwrap();
    let b = store.insert("b", Tensor::new(vec![1], vec![1.0], true).unwrap()).unwrap();
    let grads = {
        let mut g = Graph::new(&store);
        let (pw, pb) = (g.param(w), g.param(b));
        let both = g.add(pw, pb).unwrap();
        let loss = g.scalar_mul(both, 0.5);
        g.backward(loss).unwrap()
    };
    store.accumulate(&grads);
    adamw_step(&mut store, &mut AdamState::new(), 1e-3, &AdamW::default()).unwrap();
    let (ew, eb) = ((store.get(w).data()[0] as f64 - 0.998_950_000_02).abs(), (store.get(b).data()[0] as f64 - 0.999_000_000_02).abs());
    ensure(ew < 1e-7 && eb < 1e-7, || format!("decayed step off by {ew:e} / {eb:e}"))?;
    Ok(format!("endpoints exact for 4 schedules; first steps off by {e1:.1e}, {ew:.1e}, {eb:.1e}"))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Check, u64); 10] = [
        ("zero-init equivalence", c1_zero_init, 10),
        ("gradient audit", c2_gradient_audit, 120),
        ("freeze contract", c3_freeze_contract, 60),
        ("geometry oracles", c4_geometry_oracles, 30),
        ("permutation invariance", c5_permutation_invariance, 60),
        ("desk-scale trainability", c6_trainability, 600),
        ("ablation ordering", c7_ablation_ordering, 0),
        ("parameter accounting", c8_accounting, 0),
        ("format robustness", c9_formats, 120),
        ("scheduler/optimizer exactness", c10_schedule_and_optimizer, 0),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    // panics become FAIL lines; the default hook would interleave backtraces
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, run, budget)) in criteria.iter().enumerate() {
        let id = (i + 1).to_string();
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        let result = match result {
            Ok(d) if *budget > 0 && secs >= *budget as f64 => Err(format!("{d}; took {secs:.1} s, budget {budget} s")),
            r => r,
        };
        match result {
            Ok(d) => println!("PASS {id:>2} {name}: {d} [{secs:.1} s]"),
            Err(e) => {
                failed += 1;
                println!("FAIL {id:>2} {name}: {e} [{secs:.1} s]");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
