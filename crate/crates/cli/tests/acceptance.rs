//! Acceptance suite. Runs every criterion in order, prints one PASS/FAIL
//! line each and exits non-zero if any failed.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use common::{binary_mcc, gradient_error, kappa_oracle, random_annotations, random_model};
use hatelens::agreement::AnnotationMatrix;
use hatelens::corpus::{split_train_test, synth_corpus, LabeledCorpus, SynthSpec};
use hatelens::ensemble::{cv_train, majority_vote};
use hatelens::explain::{explain, leave_one_out, propagate, redistribute, sa_coordinates, LrpConfig, Method};
use hatelens::faithfulness::{
    comprehensiveness, extract_rationale, faithfulness_report, random_rationale, sufficiency, FaithfulnessConfig,
    Rationale, RationaleSource, SufficiencyForm,
};
use hatelens::metrics::{class_report, mcc, ConfusionMatrix};
use hatelens::network::{Layer, Mode, Optimizer, TrainConfig};
use hatelens::pipeline::{evaluate, fit_classifier, Architecture, Classifier, ClassifierConfig, TextClassifier};
use hatelens::rng::seeded;
use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MODELS: u64 = 100;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn within(elapsed: Duration, limit: Duration) -> bool {
    elapsed < limit
}

fn kappa_suite() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let (mut worst, mut compared, mut mismatched) = (0.0f64, 0, 0);
    for _ in 0..200 {
        let (x, m) = random_annotations(&mut rng);
        let got = AnnotationMatrix::new(x.clone(), m).unwrap().overall_kappa().ok();
        match (got, kappa_oracle(&x, m)) {
            (Some(a), Some(b)) => {
                worst = worst.max((a - b).abs());
                compared += 1;
            }
            (None, None) => {}
            _ => mismatched += 1,
        }
    }
    let mut perfect_ok = true;
    for _ in 0..50 {
        let n = rng.random_range(1..=6);
        let m = rng.random_range(2..=4u32);
        let k = rng.random_range(2..=4);
        let mut x: Vec<Vec<u32>> = (0..n)
            .map(|_| {
                let mut row = vec![0; k];
                row[rng.random_range(0..k)] = m;
                row
            })
            .collect();
        // at least two categories in use, otherwise kappa is undefined
        for used in 0..2 {
            let mut row = vec![0; k];
            row[used] = m;
            x.push(row);
        }
        perfect_ok &= AnnotationMatrix::new(x, m).unwrap().overall_kappa().ok() == Some(1.0);
    }
    let split = AnnotationMatrix::new(vec![vec![1, 1], vec![1, 1]], 2).unwrap().overall_kappa().ok();
    let elapsed = start.elapsed();
    outcome(
        worst < 1e-12 && mismatched == 0 && perfect_ok && split == Some(-1.0) && within(elapsed, Duration::from_secs(1)),
        format!(
            "max |Δ| {worst:.1e} over {compared} defined matrices, {mismatched} definedness mismatches, \
             perfect agreement = 1: {perfect_ok}, [[1,1],[1,1]] = {split:?}, {elapsed:.2?}"
        ),
    )
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let worst = (0..MODELS).map(|s| gradient_error(s, false)).fold(0.0, f64::max);
    let elapsed = start.elapsed();
    outcome(
        worst < 1e-4 && within(elapsed, Duration::from_secs(30)),
        format!("max relative error {worst:.2e} over {MODELS} models, {elapsed:.2?}"),
    )
}

fn relative(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-12)
}

fn lrp_suite() -> Outcome {
    let start = Instant::now();
    let cfg = LrpConfig { epsilon: 0.01, delta: 1.0 };
    let (mut layer_worst, mut layers) = (0.0f64, 0);
    let mut total_worst = 0.0f64;
    for seed in 0..MODELS {
        let rm = random_model(seed, false);
        let trace = rm.model.forward(&rm.input, Mode::Eval).unwrap();
        let lrp = propagate(&rm.model, &trace, rm.class, &cfg).unwrap();
        for (i, layer) in rm.model.layers().iter().enumerate() {
            if matches!(layer, Layer::Dense { .. } | Layer::Conv1D { .. }) {
                let below = lrp.inputs[i].as_ref().unwrap().sum();
                let above = lrp.inputs[i + 1].as_ref().unwrap().sum();
                layer_worst = layer_worst.max(relative(below, above));
                layers += 1;
            }
        }
        let mut bare = rm.model.clone();
        bare.zero_biases();
        let trace = bare.forward(&rm.input, Mode::Eval).unwrap();
        let lrp = propagate(&bare, &trace, rm.class, &LrpConfig { epsilon: 0.0, delta: 1.0 }).unwrap();
        total_worst = total_worst.max(relative(lrp.input_relevance().sum(), trace.prediction.scores[rm.class]));
    }
    let elapsed = start.elapsed();
    let exact = LrpConfig { epsilon: 0.0, delta: 1.0 };
    let first = redistribute(&[1.0, 1.0], &[2.0, -1.0], 0.0, 1.0, &exact);
    let second = redistribute(&[1.0, 1.0], &[2.0, -1.0], 0.0, 1.0, &LrpConfig { epsilon: 0.01, delta: 1.0 });
    let third = redistribute(&[0.5, 0.5], &[1.0, 1.0], 0.5, 1.5, &exact);
    let hand = first == [2.0, -1.0]
        && first.iter().sum::<f64>() == 1.0
        && second == [2.005 / 1.01, -0.995 / 1.01]
        && second.iter().sum::<f64>() == 1.0
        && third == [0.75, 0.75];
    outcome(
        layer_worst <= 1e-9 && total_worst <= 1e-9 && hand && within(elapsed, Duration::from_secs(30)),
        format!(
            "per-layer {layer_worst:.1e} over {layers} dense/conv layers, bias-free total {total_worst:.1e}, \
             hand examples exact: {hand}, {elapsed:.2?}"
        ),
    )
}

fn sa_suite() -> Outcome {
    let (mut worst, mut negative) = (0.0f64, 0);
    for seed in 0..MODELS {
        let rm = random_model(seed, false);
        let sq = sa_coordinates(&rm.model, &rm.input, rm.class).unwrap();
        let g = rm.model.input_gradient(&rm.input, rm.class).unwrap();
        let norm2: f64 = g.as_slice().iter().map(|v| v * v).sum();
        negative += sq.as_slice().iter().filter(|&&v| v < 0.0).count();
        worst = worst.max((sq.sum() - norm2).abs() / norm2.max(1e-300));
    }
    outcome(
        worst <= 1e-9 && negative == 0,
        format!("max relative gap {worst:.1e}, {negative} negative scores"),
    )
}

struct Experiment {
    train: LabeledCorpus,
    test: LabeledCorpus,
    model: Classifier,
    config: ClassifierConfig,
}

fn experiment_config() -> ClassifierConfig {
    ClassifierConfig {
        architecture: Architecture::ConvLstm,
        max_len: 24,
        init_seed: 3,
        train: TrainConfig {
            optimizer: Optimizer::Adam,
            learning_rate: 0.01,
            epochs: 8,
            batch_size: 16,
            seed: 4,
            ..Default::default()
        },
        ..Default::default()
    }
}

fn synthetic_experiment() -> (Outcome, Experiment) {
    let corpus = synth_corpus(&SynthSpec::new(4, 200, 2, 200, 20, 17)).unwrap();
    let (train, test) = split_train_test(&corpus, 0.2, 18).unwrap();
    let config = experiment_config();
    let start = Instant::now();
    let (model, _) = fit_classifier(&train, &config).unwrap();
    let elapsed = start.elapsed();
    let (_, report) = evaluate(&model, &test).unwrap();

    let lrp = LrpConfig::default();
    let (mut correct, mut top3) = (0, 0);
    let (mut e_lrp, mut e_random) = (0.0, 0.0);
    let mut rng = seeded(19);
    for doc in &test.documents {
        let c = model.predict(&doc.tokens).unwrap();
        let rel = explain(&model, doc, c, Method::Lrp, &lrp).unwrap();
        if c == doc.label {
            correct += 1;
            let gold = doc.gold_rationale.as_ref().unwrap();
            if rel.ranking().iter().take(3).any(|&i| gold.contains(&rel.tokens[i].pos)) {
                top3 += 1;
            }
        }
        let r = extract_rationale(&rel, doc, 0.2).unwrap();
        e_lrp += comprehensiveness(&model, doc, &r, c).unwrap();
        let rr = random_rationale(doc, r.len(), &mut rng);
        e_random += comprehensiveness(&model, doc, &rr, c).unwrap();
    }
    let n = test.len() as f64;
    let (e_lrp, e_random) = (e_lrp / n, e_random / n);
    let top3_rate = top3 as f64 / correct.max(1) as f64;
    let faith = faithfulness_report(
        &model,
        "conv-lstm",
        &test,
        &FaithfulnessConfig { method: Method::Lrp, p: 0.2, lrp, sufficiency_form: SufficiencyForm::Difference },
    )
    .unwrap();
    let matched = faith.match_rate.unwrap_or(0.0);

    let a = report.macro_f1 >= 0.95 && within(elapsed, Duration::from_secs(300));
    let b = top3_rate >= 0.9;
    let c = e_lrp - e_random >= 0.1;
    let d = matched >= 0.8;
    let result = outcome(
        a && b && c && d,
        format!(
            "(a) macro-F1 {:.4} trained in {elapsed:.1?}: {a}; (b) planted token in LRP top 3 for {:.1}% of {correct} \
             correct docs: {b}; (c) comprehensiveness LRP {e_lrp:.3} vs random {e_random:.3}: {c}; (d) match rate \
             {matched:.3}: {d}",
            report.macro_f1,
            100.0 * top3_rate
        ),
    );
    (result, Experiment { train, test, model, config })
}

fn ensemble_suite(x: &Experiment) -> Outcome {
    let cv = cv_train(&x.train, 5, &x.config, 21).unwrap();
    let alpha: f64 = cv.model.weights.iter().sum();
    let (_, report) = evaluate(&cv.model, &x.test).unwrap();
    let best = cv
        .model
        .members
        .iter()
        .map(|m| evaluate(m, &x.test).unwrap().1.macro_f1)
        .fold(f64::MIN, f64::max);
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut stable = true;
    for doc in &x.test.documents {
        let mut dists = cv.model.member_distributions(&doc.tokens).unwrap();
        let label = majority_vote(&dists).unwrap();
        for _ in 0..50 {
            dists.shuffle(&mut rng);
            stable &= majority_vote(&dists).unwrap() == label;
        }
    }
    let sum_ok = (alpha - 1.0).abs() < 1e-12;
    let f1_ok = report.macro_f1 >= best - 0.02;
    outcome(
        sum_ok && f1_ok && stable,
        format!(
            "Σα = {alpha}; ensemble macro-F1 {:.4} vs best fold model {best:.4}; majority vote stable over 50 \
             permutations of each of {} docs: {stable}",
            report.macro_f1,
            x.test.len()
        ),
    )
}

fn faithfulness_identities(x: &Experiment) -> Outcome {
    let mut violations = 0;
    for doc in &x.test.documents {
        let c = x.model.predict(&doc.tokens).unwrap();
        let whole = Rationale::new(doc, (0..doc.tokens.len()).collect(), RationaleSource::Extracted).unwrap();
        let empty = Rationale::new(doc, BTreeSet::new(), RationaleSource::Extracted).unwrap();
        if sufficiency(&x.model, doc, &whole, c, SufficiencyForm::Difference).unwrap() != 0.0 {
            violations += 1;
        }
        if comprehensiveness(&x.model, doc, &empty, c).unwrap() != 0.0 {
            violations += 1;
        }
    }
    outcome(violations == 0, format!("{violations} non-zero values over {} docs", x.test.len()))
}

fn metrics_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let c: Vec<u64> = (0..4).map(|_| rng.random_range(0..50)).collect();
        let cm = ConfusionMatrix::from_counts(vec![vec![c[0], c[1]], vec![c[2], c[3]]]).unwrap();
        let [tp, fn_, fp, tn] = [c[0], c[1], c[2], c[3]].map(|v| v as f64);
        worst = worst.max((mcc(&cm).value - binary_mcc(tp, tn, fp, fn_)).abs());
    }
    let diag = ConfusionMatrix::from_counts(vec![vec![5, 0, 0], vec![0, 7, 0], vec![0, 0, 2]]).unwrap();
    let (f1, m) = (class_report(&diag).macro_f1, mcc(&diag).value);
    outcome(
        worst < 1e-12 && f1 == 1.0 && m == 1.0,
        format!("max |Δ| {worst:.1e} over 500 matrices; diagonal F1 {f1}, MCC {m}"),
    )
}

const RUN_CONFIG: &str = r#"
[data]
train = "data/train.csv"
test = "data/test.csv"

[preprocess]
min_df = 1
max_len = 24

[model]
architecture = "conv_lstm"

[train]
optimizer = "adam"
learning_rate = 0.01
epochs = 3
batch_size = 16

[run]
out = "out"
seed = 7
"#;

fn cli(dir: &Path, args: &[&str]) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_hatelens"))
        .current_dir(dir)
        .env_remove("HATELENS_OUT")
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if status.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&status.stderr)))
    }
}

fn full_run(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    fs::write(dir.join("run.toml"), RUN_CONFIG).map_err(|e| e.to_string())?;
    cli(dir, &["synth", "--per-class", "50", "--vocab", "80", "--noise-len", "12", "--seed", "7", "-o", "data"])?;
    cli(dir, &["train", "-c", "run.toml"])?;
    cli(dir, &["explain", "-c", "run.toml", "-m", "out/model.json"])?;
    let mut files = vec![("metrics.json".to_string(), fs::read(dir.join("out/metrics.json")).map_err(|e| e.to_string())?)];
    let mut names: Vec<_> = fs::read_dir(dir.join("out/relevance"))
        .map_err(|e| e.to_string())?
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    for name in names {
        let bytes = fs::read(dir.join("out/relevance").join(&name)).map_err(|e| e.to_string())?;
        files.push((format!("relevance/{name}"), bytes));
    }
    Ok(files)
}

fn determinism() -> Outcome {
    let root = tempfile::tempdir().unwrap();
    let runs: Vec<_> = ["first", "second"]
        .iter()
        .map(|name| {
            let dir = root.path().join(name);
            fs::create_dir_all(&dir).unwrap();
            full_run(&dir)
        })
        .collect();
    match (&runs[0], &runs[1]) {
        (Ok(a), Ok(b)) => {
            let same = a == b;
            let differing: Vec<&str> = a
                .iter()
                .zip(b)
                .filter(|(x, y)| x != y)
                .map(|(x, _)| x.0.as_str())
                .collect();
            outcome(
                same && a.len() > 1,
                format!("{} files compared, differing: {:?}", a.len().max(b.len()), differing),
            )
        }
        (Err(e), _) | (_, Err(e)) => outcome(false, format!("CLI run failed: {e}")),
    }
}

fn leave_one_out_suite(x: &Experiment) -> Outcome {
    let (mut gap, mut raised, mut checked) = (0.0f64, 0, 0);
    for doc in x.test.documents.iter().take(100) {
        let c = x.model.predict(&doc.tokens).unwrap();
        let rel = leave_one_out(&x.model, doc, c).unwrap();
        let before = x.model.predict_proba(&doc.tokens).unwrap()[c];
        gap = gap.max((before - rel.tokens.iter().map(|t| t.score).sum::<f64>()).abs());
        let Some(&top) = rel.ranking().first() else { continue };
        if rel.tokens[top].score <= 0.0 {
            continue;
        }
        let mut reduced = doc.tokens.clone();
        reduced.remove(rel.tokens[top].pos);
        let after = x.model.predict_proba(&reduced).unwrap()[c];
        checked += 1;
        if after > before + 1e-9 {
            raised += 1;
        }
    }
    outcome(
        raised == 0,
        format!(
            "{raised} of {checked} docs raised p_c after removing the top token; max |p_c − ΣLOO| {gap:.3} (reported only)"
        ),
    )
}

fn main() {
    let mut results: Vec<(&str, Outcome)> = vec![
        ("1 kappa oracle", kappa_suite()),
        ("2 gradient check", gradient_suite()),
        ("3 LRP conservation", lrp_suite()),
        ("4 SA identity", sa_suite()),
    ];
    let (synthetic, x) = synthetic_experiment();
    results.push(("5 synthetic experiment", synthetic));
    results.push(("6 ensemble", ensemble_suite(&x)));
    results.push(("7 faithfulness identities", faithfulness_identities(&x)));
    results.push(("8 metrics", metrics_suite()));
    results.push(("9 determinism", determinism()));
    results.push(("10 leave-one-out", leave_one_out_suite(&x)));

    let mut failed = 0;
    for (name, r) in &results {
        println!("{} criterion {name}: {}", if r.pass { "PASS" } else { "FAIL" }, r.detail);
        failed += usize::from(!r.pass);
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
