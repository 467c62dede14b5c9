mod common;

use std::collections::{BTreeSet, HashMap};

use common::{binary_mcc, kappa_oracle, random_annotations};
use hatelens::agreement::AnnotationMatrix;
use hatelens::corpus::{filter_infrequent, fit_length, Document, LabeledCorpus};
use hatelens::explain::{permutation_importance, propagate, LrpConfig};
use hatelens::features::{extract_features, SparseVector, TfIdfConfig, TfIdfModel};
use hatelens::metrics::{class_report, mcc, ConfusionMatrix};
use hatelens::network::{Activation, InputSpec, LayerSpec, ModelGraph, ModelInput, ModelSpec, Mode, NaiveBayes};
use proptest::prelude::*;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

fn corpus_of(docs: &[&str]) -> LabeledCorpus {
    let documents = docs
        .iter()
        .enumerate()
        .map(|(i, d)| Document::from_tokens(format!("d{i}"), toks(d), i % 2))
        .collect();
    LabeledCorpus::new(documents, vec!["a".into(), "b".into()], "test").unwrap()
}

#[test]
fn kappa_matches_direct_evaluation() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut checked = 0;
    for _ in 0..500 {
        let (x, m) = random_annotations(&mut rng);
        let a = AnnotationMatrix::new(x.clone(), m).unwrap();
        match (a.overall_kappa().ok(), kappa_oracle(&x, m)) {
            (Some(got), Some(want)) => {
                assert!((got - want).abs() < 1e-12, "{x:?}: {got} vs {want}");
                checked += 1;
            }
            (None, None) => {}
            other => panic!("{x:?}: {other:?}"),
        }
    }
    assert!(checked > 400);
}

#[test]
fn kappa_hand_cases() {
    let split = AnnotationMatrix::new(vec![vec![1, 1], vec![1, 1]], 2).unwrap();
    assert_eq!(split.overall_kappa().unwrap(), -1.0);
    let perfect = AnnotationMatrix::new(vec![vec![3, 0, 0], vec![0, 3, 0], vec![0, 0, 3], vec![3, 0, 0]], 3).unwrap();
    assert_eq!(perfect.overall_kappa().unwrap(), 1.0);
}

proptest! {
    #[test]
    fn kappa_invariant_under_row_and_category_permutation(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut x, m) = random_annotations(&mut rng);
        let Ok(base) = AnnotationMatrix::new(x.clone(), m).unwrap().overall_kappa() else {
            return Ok(());
        };
        x.shuffle(&mut rng);
        let mut cols: Vec<usize> = (0..x[0].len()).collect();
        cols.shuffle(&mut rng);
        let permuted: Vec<Vec<u32>> = x.iter().map(|row| cols.iter().map(|&c| row[c]).collect()).collect();
        let other = AnnotationMatrix::new(permuted, m).unwrap().overall_kappa().unwrap();
        prop_assert!((base - other).abs() < 1e-12);
    }

    #[test]
    fn defined_kappas_are_at_most_one(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (x, m) = random_annotations(&mut rng);
        let a = AnnotationMatrix::new(x, m).unwrap();
        for kappa in a.report().kappa.into_iter().flatten() {
            prop_assert!(kappa <= 1.0 + 1e-12);
        }
    }
}

/// tf·idf with smoothed idf, then L2 normalization, computed per feature
/// name from raw counts.
fn tfidf_oracle(docs: &[Vec<String>], query: &[String], config: &TfIdfConfig) -> HashMap<String, f64> {
    let n = docs.len() as f64;
    let tf = extract_features(query, config);
    let mut raw = HashMap::new();
    for (name, count) in tf {
        let df = docs
            .iter()
            .filter(|d| extract_features(d, config).contains_key(&name))
            .count() as f64;
        if df == 0.0 {
            continue;
        }
        raw.insert(name, count as f64 * (((1.0 + n) / (1.0 + df)).ln() + 1.0));
    }
    let norm = raw.values().map(|v| v * v).sum::<f64>().sqrt();
    raw.into_iter().map(|(k, v)| (k, v / norm)).collect()
}

#[test]
fn tfidf_matches_direct_computation() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let words = ["ka", "kha", "ga", "gha", "nga", "ca"];
    for _ in 0..20 {
        let docs: Vec<String> = (0..5)
            .map(|_| {
                let len = rng.random_range(1..=6);
                (0..len).map(|_| *words.choose(&mut rng).unwrap()).collect::<Vec<_>>().join(" ")
            })
            .collect();
        let refs: Vec<&str> = docs.iter().map(String::as_str).collect();
        let corpus = corpus_of(&refs);
        for config in [
            TfIdfConfig::default(),
            TfIdfConfig {
                char_ngram_range: Some((1, 3)),
                use_word_unigrams: true,
            },
        ] {
            let model = TfIdfModel::fit(&corpus, config).unwrap();
            let token_docs: Vec<Vec<String>> = corpus.documents.iter().map(|d| d.tokens.clone()).collect();
            for doc in &corpus.documents {
                let want = tfidf_oracle(&token_docs, &doc.tokens, &config);
                let got = model.transform(doc);
                assert_eq!(got.entries.len(), want.len());
                for &(i, v) in &got.entries {
                    let w = want[&model.features[i]];
                    assert!((v - w).abs() < 1e-12, "{}: {v} vs {w}", model.features[i]);
                }
            }
        }
    }
}

proptest! {
    #[test]
    fn tfidf_rows_have_unit_norm_and_keep_every_fitted_feature(
        docs in prop::collection::vec(prop::collection::vec("[a-e]{1,3}", 1..6), 1..6)
    ) {
        let documents = docs
            .iter()
            .enumerate()
            .map(|(i, d)| Document::from_tokens(format!("d{i}"), d.clone(), i % 2))
            .collect();
        let corpus = LabeledCorpus::new(documents, vec!["a".into(), "b".into()], "p").unwrap();
        let config = TfIdfConfig { char_ngram_range: Some((1, 2)), use_word_unigrams: true };
        let model = TfIdfModel::fit(&corpus, config).unwrap();
        for doc in &corpus.documents {
            let v = model.transform(doc);
            prop_assert!((v.norm() - 1.0).abs() < 1e-9);
            prop_assert_eq!(v.entries.len(), extract_features(&doc.tokens, &config).len());
        }
    }

    #[test]
    fn filtering_leaves_no_rare_token(
        docs in prop::collection::vec(prop::collection::vec("[a-f]", 0..8), 1..10),
        min_df in 1usize..4,
    ) {
        let documents = docs
            .iter()
            .enumerate()
            .map(|(i, d)| Document::from_tokens(format!("d{i}"), d.clone(), i % 2))
            .collect();
        let corpus = LabeledCorpus::new(documents, vec!["a".into(), "b".into()], "p").unwrap();
        let filtered = filter_infrequent(&corpus, min_df);
        let mut df: HashMap<&str, usize> = HashMap::new();
        for d in &filtered.documents {
            for t in d.tokens.iter().map(String::as_str).collect::<BTreeSet<_>>() {
                *df.entry(t).or_default() += 1;
            }
        }
        prop_assert!(df.values().all(|&n| n >= min_df));
        prop_assert_eq!(filtered.len(), corpus.len());
    }

    #[test]
    fn fitted_length_is_exact(tokens in prop::collection::vec("[a-z]{1,4}", 0..30), max_len in 1usize..20) {
        let fitted = fit_length(&tokens, max_len);
        prop_assert_eq!(fitted.tokens.len(), max_len);
        prop_assert_eq!(fitted.mask.len(), max_len);
        prop_assert_eq!(fitted.real_len(), tokens.len().min(max_len));
    }
}

#[test]
fn naive_bayes_three_document_hand_evaluation() {
    let sv = |e: &[(usize, f64)]| SparseVector { dim: 2, entries: e.to_vec() };
    let xs = [sv(&[(0, 2.0)]), sv(&[(1, 1.0)]), sv(&[(0, 1.0), (1, 1.0)])];
    let nb = NaiveBayes::fit(&xs, &[0, 1, 1], 2, 1.0).unwrap();
    // θ_0 = (3/4, 1/4), θ_1 = (2/5, 3/5), priors (1/3, 2/3):
    // P(0 | x = e_0) = (1/4) / (1/4 + 4/15) = 15/31.
    let p = nb.predict_proba(&sv(&[(0, 1.0)]));
    assert!((p[0] - 15.0 / 31.0).abs() < 1e-12);
    assert!((p[1] - 16.0 / 31.0).abs() < 1e-12);
    // x = e_1: 1/3·1/4 = 1/12 against 2/3·3/5 = 2/5 → 5/29.
    let p = nb.predict_proba(&sv(&[(1, 1.0)]));
    assert!((p[0] - 5.0 / 29.0).abs() < 1e-12);
}

fn macro_f1_oracle(gold: &[usize], pred: &[usize], k: usize) -> f64 {
    let mut total = 0.0;
    for c in 0..k {
        let tp = gold.iter().zip(pred).filter(|(g, p)| **g == c && **p == c).count() as f64;
        let fp = gold.iter().zip(pred).filter(|(g, p)| **g != c && **p == c).count() as f64;
        let fn_ = gold.iter().zip(pred).filter(|(g, p)| **g == c && **p != c).count() as f64;
        let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let recall = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
        if precision + recall > 0.0 {
            total += 2.0 * precision * recall / (precision + recall);
        }
    }
    total / k as f64
}

#[test]
fn permutation_importance_matches_step_by_step_recomputation() {
    // Class = argmax of (x0 + 0.5·x1, 1 − x0); x2 is ignored.
    let model = |rows: &[Vec<f64>]| -> hatelens::Result<Vec<usize>> {
        Ok(rows.iter().map(|r| usize::from(1.0 - r[0] > r[0] + 0.5 * r[1])).collect())
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let rows: Vec<Vec<f64>> = (0..30).map(|_| (0..3).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
    let labels: Vec<usize> = rows
        .iter()
        .map(|r| usize::from(1.0 - r[0] > r[0] + 0.5 * r[1]) ^ usize::from(rng.random_bool(0.1)))
        .collect();
    let seed = 17;
    let reps = 5;
    let report = permutation_importance(model, &rows, &labels, 2, &[0, 1, 2], reps, seed).unwrap();

    let reference = macro_f1_oracle(&labels, &model(&rows).unwrap(), 2);
    let mut stream = ChaCha8Rng::seed_from_u64(seed);
    for (slot, j) in [0, 1, 2].into_iter().enumerate() {
        let mut drops = Vec::new();
        for _ in 0..reps {
            let mut order: Vec<usize> = (0..rows.len()).collect();
            order.shuffle(&mut stream);
            let shuffled: Vec<Vec<f64>> = rows
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    let mut r = r.clone();
                    r[j] = rows[order[i]][j];
                    r
                })
                .collect();
            drops.push(reference - macro_f1_oracle(&labels, &model(&shuffled).unwrap(), 2));
        }
        let want = drops.iter().sum::<f64>() / reps as f64;
        assert!((report.importances[slot] - want).abs() < 1e-12, "column {j}");
    }
    assert!((report.reference - reference).abs() < 1e-12);
    assert_eq!(report.importances[2], 0.0);
    assert!(report.importances[0] > 0.0);
}

fn linear_model(weights: &[f64], dim: usize, k: usize) -> ModelGraph {
    let spec = ModelSpec {
        input: InputSpec::Features { dim },
        layers: vec![
            LayerSpec::Dense {
                units: k,
                activation: Activation::Linear,
            },
            LayerSpec::Softmax { classes: k },
        ],
    };
    let mut model = ModelGraph::build(&spec, 0, k, 0).unwrap();
    model.zero_biases();
    model.layers_mut()[0].params_mut()[0].as_mut_slice().copy_from_slice(weights);
    model
}

proptest! {
    #[test]
    fn lrp_on_a_linear_layer_is_input_times_weight(
        x in prop::collection::vec(-2.0f64..2.0, 3),
        w in prop::collection::vec(-2.0f64..2.0, 6),
        c in 0usize..2,
    ) {
        let model = linear_model(&w, 3, 2);
        let input = ModelInput::Dense(x.clone());
        let trace = model.forward(&input, Mode::Eval).unwrap();
        let cfg = LrpConfig { epsilon: 0.0, delta: 1.0 };
        let r = propagate(&model, &trace, c, &cfg).unwrap();
        let z: f64 = (0..3).map(|i| x[i] * w[i * 2 + c]).sum();
        prop_assume!(z.abs() > 1e-6);
        for i in 0..3 {
            let want = x[i] * w[i * 2 + c];
            let got = r.input_relevance().as_slice()[i];
            prop_assert!((got - want).abs() <= 1e-9 * want.abs().max(1.0), "{} vs {}", got, want);
        }
    }

    #[test]
    fn forward_outputs_are_distributions(seed in any::<u64>()) {
        let rm = common::random_model(seed, false);
        let p = rm.model.predict(&rm.input).unwrap().probs;
        prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn multiclass_mcc_reduces_to_binary(counts in prop::collection::vec(0u64..40, 4)) {
        let cm = ConfusionMatrix::from_counts(vec![vec![counts[0], counts[1]], vec![counts[2], counts[3]]]).unwrap();
        let [tp, fn_, fp, tn] = [counts[0], counts[1], counts[2], counts[3]].map(|v| v as f64);
        prop_assert!((mcc(&cm).value - binary_mcc(tp, tn, fp, fn_)).abs() < 1e-12);
    }

    #[test]
    fn diagonal_matrices_are_perfect(diag in prop::collection::vec(1u64..30, 2..5)) {
        let k = diag.len();
        let counts = (0..k).map(|i| (0..k).map(|j| if i == j { diag[i] } else { 0 }).collect()).collect();
        let cm = ConfusionMatrix::from_counts(counts).unwrap();
        prop_assert_eq!(class_report(&cm).macro_f1, 1.0);
        prop_assert_eq!(mcc(&cm).value, 1.0);
    }
}
