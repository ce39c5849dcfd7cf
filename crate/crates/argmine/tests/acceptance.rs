//! The acceptance suite: one PASS/FAIL line per criterion, nonzero exit on
//! any failure. Runs without the libtest harness so the lines always print.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use argmine::commands::{cmd_eval, cmd_train, run_gradcheck, GradCheckArgs, MODEL_FILE, TRAIN_LOG_FILE};
use argmine::formats::{save_corpus, save_schema};
use argmine_core::corpus::{enumerate_pairs, generate_synthetic, RelationTypeRule, SyntheticConfig};
use argmine_core::encoder::{EncoderSource, Vocab};
use argmine_core::evaluator::{f1_per_class, ArtcScope};
use argmine_core::model::ParamGroup;
use argmine_core::numerics::Tensor;
use argmine_core::relation::{argu_atten, postprocess_ari, postprocess_artc, residual_layernorm, Attention};
use argmine_core::trainer::{train, TrainConfig};
use argmine_core::{Corpus, LabelSchema, ModelParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(rows, cols, |_, _| rng.gen_range(-scale..scale))
}

fn within(elapsed: Duration, limit: Duration, what: &str) -> Result<(), String> {
    ensure(elapsed < limit, || {
        format!("{what} took {elapsed:.1?}, limit {limit:?}")
    })
}

fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for (no_arguatten, no_distance) in [(false, false), (true, false), (false, true)] {
        let args = GradCheckArgs {
            seed: 1,
            no_arguatten,
            no_distance,
            components: 3,
            step: 1e-4,
            tol: 1e-4,
            ..GradCheckArgs::default()
        };
        let report = run_gradcheck(&args, |_| {}).map_err(|e| e.to_string())?;
        let names: Vec<_> = report.failures().map(|t| t.name.clone()).collect();
        ensure(report.passed(), || format!("tensors over tolerance: {names:?}"))?;
        worst = worst.max(report.max_rel_error());
    }
    within(start.elapsed(), Duration::from_secs(30), "gradient check")?;
    Ok(format!(
        "max relative error {worst:.2e} over all tensors, three architectures"
    ))
}

fn structural_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for case in 0..200 {
        let m = rng.gen_range(1..8);
        let d = rng.gen_range(8..16);
        let att = Attention {
            query: random(d, d, 1.0, &mut rng),
            key: random(d, d, 1.0, &mut rng),
            value: random(d, d, 1.0, &mut rng),
            gain: Tensor::filled(1, d, 1.0),
            bias: Tensor::zeros(1, d),
        };
        let acs = random(m, d, 10.0, &mut rng);
        let out = argu_atten(&acs, &att).map_err(|e| e.to_string())?;
        for r in 0..m {
            let sum: f64 = out.weights.row(r).iter().sum();
            ensure((sum - 1.0).abs() <= 1e-9, || {
                format!("case {case}: attention row sums to {sum}")
            })?;
        }
        let normed = residual_layernorm(&acs, &out.output, &att.gain, &att.bias).map_err(|e| e.to_string())?;
        for r in 0..m {
            let row = normed.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            ensure(mean.abs() <= 1e-7, || format!("case {case}: layer-norm mean {mean}"))?;
            ensure((var - 1.0).abs() <= 1e-5, || {
                format!("case {case}: layer-norm variance {var}")
            })?;
        }
        let pairs = enumerate_pairs(m);
        ensure(pairs.len() == m * (m - 1), || {
            format!("case {case}: {} pairs for m={m}", pairs.len())
        })?;

        // Probability vectors with deliberate ties between `none` and the best type.
        let k = rng.gen_range(2..6);
        let mut probs: Vec<f64> = (0..k).map(|_| rng.gen_range(0..4) as f64).collect();
        let z: f64 = probs.iter().sum::<f64>().max(1.0);
        probs.iter_mut().for_each(|p| *p /= z);
        let best_type = probs[1..].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let expect_relation = best_type > probs[0];
        let ari = postprocess_ari(&probs).map_err(|e| e.to_string())?;
        ensure(ari == expect_relation, || {
            format!("case {case}: ARI {ari} for {probs:?}")
        })?;
        let artc = postprocess_artc(&probs).map_err(|e| e.to_string())?;
        let first_best = 1 + probs[1..].iter().position(|&p| p == best_type).unwrap();
        ensure(artc == first_best, || format!("case {case}: ARTC {artc} for {probs:?}"))?;
    }
    Ok("200 instances: attention, layer norm, pair count, ARI and ARTC decisions".into())
}

/// Confusion-matrix F1 built from an explicit matrix rather than running counts.
fn confusion_oracle(gold: &[usize], pred: &[usize], classes: usize, class: usize) -> f64 {
    let mut matrix = vec![vec![0u64; classes]; classes];
    for (&g, &p) in gold.iter().zip(pred) {
        matrix[g][p] += 1;
    }
    let tp = matrix[class][class];
    let predicted: u64 = (0..classes).map(|g| matrix[g][class]).sum();
    let actual: u64 = matrix[class].iter().sum();
    let precision = if predicted == 0 {
        0.0
    } else {
        tp as f64 / predicted as f64
    };
    let recall = if actual == 0 { 0.0 } else { tp as f64 / actual as f64 };
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

fn metric_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut compared = 0;
    for set in 0..1000 {
        let classes = rng.gen_range(2..6);
        let n = rng.gen_range(0..60);
        let gold: Vec<usize> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
        let pred: Vec<usize> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
        for c in 0..classes {
            let got = f1_per_class(&gold, &pred, c).map_err(|e| e.to_string())?;
            let want = confusion_oracle(&gold, &pred, classes, c);
            ensure(got.to_bits() == want.to_bits(), || {
                format!("set {set} class {c}: {got} vs {want}")
            })?;
            compared += 1;
        }
    }
    Ok(format!("1000 label sets, {compared} per-class F1 values bitwise equal"))
}

/// Writes corpora, schema and a run config into `dir`; returns the config path.
fn write_run(dir: &Path, train: &Corpus, dev_is_train: bool, test: Option<&Corpus>, seed: u64) -> std::path::PathBuf {
    save_corpus(&dir.join("train.jsonl"), train).unwrap();
    save_schema(&dir.join("schema.json"), train.schema()).unwrap();
    let mut paths = json!({"train": "train.jsonl", "schema": "schema.json", "output_dir": "out"});
    if dev_is_train {
        paths["dev"] = json!("train.jsonl");
    }
    if let Some(t) = test {
        save_corpus(&dir.join("test.jsonl"), t).unwrap();
        paths["test"] = json!("test.jsonl");
    }
    let config = json!({"profile": "toy", "train": {"seed": seed}, "paths": paths});
    let path = dir.join("run.json");
    std::fs::write(&path, config.to_string()).unwrap();
    path
}

fn learnability() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut synth = SyntheticConfig::new(20, 0.3, LabelSchema::cdcp());
    synth.acs_per_doc = (3, 6);
    let corpus = generate_synthetic(&synth, 7).map_err(|e| e.to_string())?;
    let config = write_run(dir.path(), &corpus, true, None, 7);
    let summary = cmd_train(&config, &Map::new()).map_err(|e| e.to_string())?;
    ensure(summary.outcome.epochs_run <= 300, || "ran past 300 epochs".into())?;
    let report = cmd_eval(
        &summary.output_dir.join(MODEL_FILE),
        &dir.path().join("train.jsonl"),
        None,
        None,
        None,
        ArtcScope::GoldRelations,
    )
    .map_err(|e| e.to_string())?;
    let scores = [
        ("ACTC", report.actc.macro_f1),
        ("ARI", report.ari.macro_f1),
        ("ARTC", report.artc.macro_f1),
    ];
    for (task, f1) in scores {
        ensure(f1 >= 0.95, || format!("train-split {task} macro-F1 {f1:.4} < 0.95"))?;
    }
    within(start.elapsed(), Duration::from_secs(120), "learnability run")?;
    Ok(format!(
        "ACTC {:.3} ARI {:.3} ARTC {:.3} after {} epochs in {:.1?}",
        scores[0].1,
        scores[1].1,
        scores[2].1,
        summary.outcome.epochs_run,
        start.elapsed()
    ))
}

fn distance_ablation() -> Outcome {
    let mut lines = Vec::new();
    for seed in [7, 8, 9] {
        let mut synth = SyntheticConfig::new(60, 0.3, LabelSchema::pe());
        synth.type_rule = RelationTypeRule::DistanceSign;
        let corpus = generate_synthetic(&synth, seed).map_err(|e| e.to_string())?;
        let (train_part, test_part) = corpus.split_off_dev(1.0 / 3.0, seed).map_err(|e| e.to_string())?;
        let mut artc = Vec::new();
        for ablate in [false, true] {
            let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
            let config = write_run(dir.path(), &train_part, true, Some(&test_part), seed);
            let overrides: Map<String, Value> = [("no_distance".to_string(), json!(ablate))].into_iter().collect();
            let summary = cmd_train(&config, &overrides).map_err(|e| e.to_string())?;
            artc.push(summary.test_report.expect("test path was given").artc.macro_f1);
        }
        let drop = artc[0] - artc[1];
        ensure(drop >= 0.10, || {
            format!(
                "seed {seed}: held-out ARTC full {:.3} vs no-distance {:.3}",
                artc[0], artc[1]
            )
        })?;
        lines.push(format!("seed {seed}: {:.3} vs {:.3}", artc[0], artc[1]));
    }
    Ok(format!("held-out ARTC full vs no-distance, {}", lines.join("; ")))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let corpus =
        generate_synthetic(&SyntheticConfig::new(12, 0.3, LabelSchema::cdcp()), 5).map_err(|e| e.to_string())?;
    let config = write_run(dir.path(), &corpus, false, None, 11);
    let mut runs = Vec::new();
    for k in 0..2 {
        let overrides: Map<String, Value> = [("max_epochs".to_string(), json!(20))].into_iter().collect();
        let summary = cmd_train(&config, &overrides).map_err(|e| e.to_string())?;
        let out = &summary.output_dir;
        let read = |name: &str| std::fs::read(out.join(name)).map_err(|e| e.to_string());
        let sidecar = format!("{MODEL_FILE}.json");
        runs.push((
            summary.outcome.log,
            read(MODEL_FILE)?,
            read(&sidecar)?,
            read(TRAIN_LOG_FILE)?,
        ));
        std::fs::rename(out, dir.path().join(format!("out{k}"))).map_err(|e| e.to_string())?;
    }
    let (a, b) = (&runs[0], &runs[1]);
    ensure(a.0.len() == b.0.len(), || "runs differ in epoch count".into())?;
    for (x, y) in a.0.iter().zip(&b.0) {
        let gap = (x.train_loss - y.train_loss).abs();
        ensure(gap <= 1e-12, || format!("epoch {}: loss differs by {gap:e}", x.epoch))?;
    }
    ensure(a.1 == b.1 && a.2 == b.2, || "checkpoints differ".into())?;
    ensure(a.3 == b.3, || "training logs differ".into())?;
    Ok(format!(
        "{} epochs, identical losses, logs and checkpoint bytes",
        a.0.len()
    ))
}

fn rate_isolation() -> Outcome {
    let corpus =
        generate_synthetic(&SyntheticConfig::new(8, 0.3, LabelSchema::cdcp()), 4).map_err(|e| e.to_string())?;
    let vocab = Vocab::from_corpus(&corpus);
    let source = EncoderSource::Toy(&vocab);
    for frozen in ParamGroup::ALL {
        let mut cfg = TrainConfig::toy();
        cfg.max_epochs = 1;
        cfg.min_epochs = 0;
        match frozen {
            ParamGroup::Encoder => cfg.lr_encoder = 0.0,
            ParamGroup::AcHead => cfg.lr_ac_head = 0.0,
            ParamGroup::ArHead => cfg.lr_ar_head = 0.0,
        }
        let out = train::<f32>(&corpus, &corpus, &source, &cfg).map_err(|e| e.to_string())?;
        // Training draws initialization first from an RNG seeded with `seed`.
        let init = ModelParams::<f32>::init(
            cfg.model_config(corpus.schema(), Some(vocab.size())),
            &mut ChaCha8Rng::seed_from_u64(cfg.seed),
        )
        .map_err(|e| e.to_string())?;
        for ((name, group, after), (_, _, before)) in out.checkpoint.params.named().iter().zip(init.named()) {
            let same = after
                .data()
                .iter()
                .zip(before.data())
                .all(|(a, b)| a.to_bits() == b.to_bits());
            if *group == frozen {
                ensure(same, || format!("{name} moved with a zero rate"))?;
            } else {
                ensure(!same, || {
                    format!("{name} did not move while {} was frozen", frozen.name())
                })?;
            }
        }
    }
    Ok("each zero-rate group bit-identical after one epoch, the others updated".into())
}

fn main() -> ExitCode {
    let criteria: [Criterion; 7] = [
        ("1 gradient fidelity", gradient_fidelity),
        ("2 structural invariants", structural_invariants),
        ("3 metric oracle equivalence", metric_oracle),
        ("4 learnability", learnability),
        ("5 distance ablation direction", distance_ablation),
        ("6 determinism", determinism),
        ("7 stratified-rate isolation", rate_isolation),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        match result {
            Ok(detail) => println!("PASS criterion {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {name}: {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
