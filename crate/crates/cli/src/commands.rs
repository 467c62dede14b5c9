//! Subcommand implementations. Every command resolves its configuration,
//! writes the run manifest, then does the work.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use hatelens::agreement::load_annotations;
use hatelens::corpus::{
    filter_infrequent, load_corpus, split_train_test, synth_corpus, write_corpus, CorpusSchema, Document,
    LabeledCorpus, SynthSpec,
};
use hatelens::ensemble::{
    cv_train_with, grid_search_weights, score_candidate, select_top_k, CandidateScore, EnsembleManifest, EnsembleModel,
};
use hatelens::explain::{explain, global_terms, render_heatmap};
use hatelens::faithfulness::faithfulness_report;
use hatelens::features::{EmbeddingTable, Vocabulary};
use hatelens::pipeline::{evaluate, fit_classifier_with, Classifier, TextClassifier};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{validate_config, ConfigError, PreprocessSection, RunConfig, Stream};
use crate::{Command, Common, ModelData};

pub enum Failure {
    /// Bad flags or configuration (exit status 2).
    Usage(String),
    /// Anything that went wrong while running (exit status 1).
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<hatelens::Error> for Failure {
    fn from(e: hatelens::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Usage(e.to_string().trim_end().to_string())
    }
}

type Outcome<T = ()> = Result<T, Failure>;

const MODEL_FORMAT: u32 = 1;

/// A trained classifier plus what is needed to feed it raw documents.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SavedModel {
    pub format_version: u32,
    pub class_names: Vec<String>,
    pub preprocess: PreprocessSection,
    pub classifier: Classifier,
}

impl SavedModel {
    fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading model {}", path.display()))?;
        let model: SavedModel =
            serde_json::from_str(&text).with_context(|| format!("parsing model {}", path.display()))?;
        if model.format_version != MODEL_FORMAT {
            return Err(anyhow!(
                "model {} has format version {}, expected {MODEL_FORMAT}",
                path.display(),
                model.format_version
            ));
        }
        Ok(model)
    }
}

struct Ctx {
    cfg: RunConfig,
    out: PathBuf,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

/// Configuration file, then flag overrides, then validation.
fn resolve(common: &Common, overrides: impl FnOnce(&mut RunConfig)) -> Outcome<Ctx> {
    let mut cfg = match &common.config {
        Some(path) => validate_config(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.run.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.run.out = out.clone();
    }
    overrides(&mut cfg);
    let violations = cfg.check();
    if !violations.is_empty() {
        return Err(ConfigError {
            source: "after applying command-line flags".into(),
            violations,
        }
        .into());
    }
    let out = cfg.run.out.clone();
    fs::create_dir_all(&out).with_context(|| format!("creating output directory {}", out.display()))?;
    Ok(Ctx { cfg, out })
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Records the command in `manifest.json`, keeping entries of earlier
/// commands run into the same directory.
fn write_manifest(ctx: &Ctx, command: &str, args: serde_json::Value) -> anyhow::Result<()> {
    let path = ctx.path("manifest.json");
    let mut runs: BTreeMap<String, serde_json::Value> = fs::read_to_string(&path)
        .ok()
        .and_then(|t| serde_json::from_str::<serde_json::Value>(&t).ok())
        .and_then(|v| v.get("runs").cloned())
        .and_then(|r| serde_json::from_value(r).ok())
        .unwrap_or_default();
    runs.insert(
        command.to_string(),
        json!({
            "seed": ctx.cfg.run.seed,
            "args": args,
            "config": ctx.cfg,
        }),
    );
    write_json(
        &path,
        &json!({
            "versions": {
                "hatelens": env!("CARGO_PKG_VERSION"),
                "format": MODEL_FORMAT,
            },
            "runs": runs,
        }),
    )
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn load(path: &Path, schema: &CorpusSchema) -> anyhow::Result<LabeledCorpus> {
    load_corpus(path, schema).with_context(|| format!("loading corpus {}", path.display()))
}

/// Training and held-out corpora after preprocessing; rare-token filtering
/// is fitted on the training side only.
fn load_splits(ctx: &Ctx) -> Outcome<(LabeledCorpus, LabeledCorpus)> {
    let cfg = &ctx.cfg;
    let train_path = cfg
        .data
        .train
        .as_ref()
        .ok_or_else(|| usage("no training data: set [data].train or pass --train"))?;
    let schema = cfg.schema();
    let full = load(train_path, &schema)?;
    let (train, test) = match &cfg.data.test {
        Some(test_path) => {
            let test = load(test_path, &CorpusSchema {
                classes: Some(full.class_names.clone()),
                ..schema
            })?;
            (full, test)
        }
        None => split_train_test(&full, cfg.data.test_fraction, cfg.seed_for(Stream::Split))?,
    };
    let pre = cfg.preprocess_config();
    let train = filter_infrequent(&train.preprocess(&pre), pre.min_df);
    Ok((train, test.preprocess(&pre)))
}

/// Corpus to run a saved model on, preprocessed like its training data and
/// with the model's class list.
fn load_for_model(ctx: &Ctx, target: &ModelData, model: &SavedModel) -> Outcome<LabeledCorpus> {
    let path = target
        .data
        .as_ref()
        .or(ctx.cfg.data.test.as_ref())
        .ok_or_else(|| usage("no data: pass --data or set [data].test"))?;
    let schema = CorpusSchema {
        classes: Some(model.class_names.clone()),
        ..ctx.cfg.schema()
    };
    let mut cfg = ctx.cfg.clone();
    cfg.preprocess = model.preprocess.clone();
    Ok(load(path, &schema)?.preprocess(&cfg.preprocess_config()))
}

fn embeddings(ctx: &Ctx) -> anyhow::Result<Option<EmbeddingTable>> {
    ctx.cfg
        .model
        .embeddings
        .as_ref()
        .map(|p| EmbeddingTable::load(p).with_context(|| format!("loading embeddings {}", p.display())))
        .transpose()
}

fn safe_name(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

pub fn run(command: Command) -> Outcome {
    match command {
        Command::Synth(a) => synth(a),
        Command::Prepare(a) => prepare(a),
        Command::Agree(a) => agree(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Explain(a) => explain_docs(a),
        Command::Faithfulness(a) => faithfulness(a),
        Command::Ensemble(a) => ensemble(a),
        Command::GlobalTerms(a) => terms(a),
    }
}

fn write_csv(path: &Path, corpus: &LabeledCorpus) -> anyhow::Result<()> {
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write_corpus(corpus, file).with_context(|| format!("writing {}", path.display()))
}

fn synth(a: crate::SynthArgs) -> Outcome {
    let ctx = resolve(&a.common, |_| {})?;
    if !(a.test_fraction > 0.0 && a.test_fraction < 1.0) {
        return Err(usage(format!("--test-fraction {} must lie in (0, 1)", a.test_fraction)));
    }
    let seed = ctx.cfg.run.seed;
    write_manifest(
        &ctx,
        "synth",
        json!({
            "classes": a.classes, "per_class": a.per_class, "planted": a.planted,
            "vocab": a.vocab, "noise_len": a.noise_len, "test_fraction": a.test_fraction,
        }),
    )?;
    let spec = SynthSpec::new(a.classes, a.per_class, a.planted, a.vocab, a.noise_len, seed);
    let corpus = synth_corpus(&spec)?;
    let (train, test) = split_train_test(&corpus, a.test_fraction, ctx.cfg.seed_for(Stream::Split))?;
    write_csv(&ctx.path("corpus.csv"), &corpus)?;
    write_csv(&ctx.path("train.csv"), &train)?;
    write_csv(&ctx.path("test.csv"), &test)?;
    println!(
        "wrote {} documents ({} train, {} test) to {}",
        corpus.len(),
        train.len(),
        test.len(),
        ctx.out.display()
    );
    Ok(())
}

fn prepare(a: crate::PrepareArgs) -> Outcome {
    let ctx = resolve(&a.common, |_| {})?;
    write_manifest(&ctx, "prepare", json!({}))?;
    let (train, test) = load_splits(&ctx)?;
    let dir = ctx.path("prepared");
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    write_csv(&dir.join("train.csv"), &train)?;
    write_csv(&dir.join("test.csv"), &test)?;
    let vocab = Vocabulary::build(&train, ctx.cfg.model.max_vocab)?;
    let counts = |c: &LabeledCorpus| {
        let mut n = vec![0usize; c.num_classes()];
        for d in &c.documents {
            n[d.label] += 1;
        }
        n
    };
    write_json(
        &ctx.path("prepare.json"),
        &json!({
            "classes": train.class_names,
            "train_per_class": counts(&train),
            "test_per_class": counts(&test),
            "empty_train_documents": train.empty_documents(),
            "empty_test_documents": test.empty_documents(),
            "vocabulary_size": vocab.len(),
        }),
    )?;
    println!("prepared {} train and {} test documents", train.len(), test.len());
    Ok(())
}

fn agree(a: crate::AgreeArgs) -> Outcome {
    let ctx = resolve(&a.common, |_| {})?;
    write_manifest(
        &ctx,
        "agree",
        json!({ "annotations": a.annotations, "raters": a.raters }),
    )?;
    let ann = load_annotations(&a.annotations, a.raters)
        .with_context(|| format!("loading annotations {}", a.annotations.display()))?;
    let report = ann.matrix.report();
    let per_category: Vec<_> = ann
        .categories
        .iter()
        .enumerate()
        .map(|(j, name)| json!({ "category": name, "p_bar": report.p_bar[j], "kappa": report.kappa[j] }))
        .collect();
    let undecided: Vec<&String> = ann
        .gold_labels()
        .iter()
        .filter(|(_, l)| l.is_none())
        .map(|(id, _)| id)
        .cloned()
        .collect::<Vec<_>>()
        .iter()
        .map(|id| ann.subject_ids.iter().find(|s| *s == id).expect("own id"))
        .collect();
    write_json(
        &ctx.path("kappa.json"),
        &json!({
            "subjects": report.subjects,
            "raters": report.raters,
            "categories": per_category,
            "overall": report.overall,
            "undecided_subjects": undecided,
        }),
    )?;
    match report.overall {
        Some(k) => println!("overall kappa {k:.4} over {} subjects", report.subjects),
        None => println!("overall kappa undefined: every category is degenerate"),
    }
    Ok(())
}

fn train(a: crate::TrainArgs) -> Outcome {
    let ctx = resolve(&a.common, |c| {
        if let Some(p) = &a.train {
            c.data.train = Some(p.clone());
        }
        if let Some(p) = &a.test {
            c.data.test = Some(p.clone());
        }
        if let Some(arch) = a.architecture {
            c.model.architecture = arch;
        }
    })?;
    write_manifest(&ctx, "train", json!({}))?;
    let (train, test) = load_splits(&ctx)?;
    let table = embeddings(&ctx)?;
    let (clf, history) = fit_classifier_with(&train, &ctx.cfg.classifier_config(), table.as_ref())?;
    let (_, metrics) = evaluate(&clf, &test)?;
    let log_norm = clf.model().map(|m| m.log_norm());
    let saved = SavedModel {
        format_version: MODEL_FORMAT,
        class_names: train.class_names.clone(),
        preprocess: ctx.cfg.preprocess.clone(),
        classifier: clf,
    };
    write_json(&ctx.path("model.json"), &saved)?;
    write_json(&ctx.path("history.json"), &history)?;
    write_json(&ctx.path("metrics.json"), &json!({ "metrics": metrics, "log_norm": log_norm }))?;
    println!(
        "{}: held-out macro-F1 {:.4}, MCC {:.4}",
        ctx.cfg.model.architecture.name(),
        metrics.macro_f1,
        metrics.mcc
    );
    Ok(())
}

fn eval(a: crate::EvalArgs) -> Outcome {
    let ctx = resolve(&a.common, |_| {})?;
    write_manifest(&ctx, "eval", json!({ "model": a.target.model, "data": a.target.data }))?;
    let model = SavedModel::load(&a.target.model)?;
    let corpus = load_for_model(&ctx, &a.target, &model)?;
    let (_, metrics) = evaluate(&model.classifier, &corpus)?;
    write_json(&ctx.path("metrics.json"), &json!({ "metrics": metrics }))?;
    println!("macro-F1 {:.4}, MCC {:.4}", metrics.macro_f1, metrics.mcc);
    Ok(())
}

fn class_arg(spec: &str, names: &[String]) -> Outcome<usize> {
    if let Some(i) = names.iter().position(|n| n == spec) {
        return Ok(i);
    }
    match spec.parse::<usize>() {
        Ok(i) if i < names.len() => Ok(i),
        _ => Err(usage(format!("unknown class {spec:?}; known classes: {}", names.join(", ")))),
    }
}

fn explain_docs(a: crate::ExplainArgs) -> Outcome {
    let ctx = resolve(&a.common, |c| {
        if let Some(m) = a.method {
            c.explain.method = m;
        }
    })?;
    write_manifest(
        &ctx,
        "explain",
        json!({ "model": a.target.model, "data": a.target.data, "doc_ids": a.doc_ids, "class": a.class }),
    )?;
    let model = SavedModel::load(&a.target.model)?;
    let class = a.class.as_deref().map(|s| class_arg(s, &model.class_names)).transpose()?;
    let corpus = load_for_model(&ctx, &a.target, &model)?;
    let docs: Vec<&Document> = if a.doc_ids.is_empty() {
        corpus.documents.iter().filter(|d| !d.is_empty()).collect()
    } else {
        a.doc_ids
            .iter()
            .map(|id| corpus.find(id).ok_or_else(|| usage(format!("no document with id {id:?}"))))
            .collect::<Outcome<_>>()?
    };
    let method = ctx.cfg.explain.method;
    let lrp = ctx.cfg.lrp();
    for doc in &docs {
        let c = match class {
            Some(c) => c,
            None => model.classifier.predict(&doc.tokens)?,
        };
        let rel = explain(&model.classifier, doc, c, method, &lrp)?.with_class_name(model.class_names[c].clone());
        let name = safe_name(&doc.id);
        write_json(&ctx.path(&format!("relevance/{name}.json")), &rel)?;
        let html = render_heatmap(doc, &rel)?;
        let path = ctx.path(&format!("heatmaps/{name}.html"));
        fs::create_dir_all(ctx.path("heatmaps")).context("creating heatmaps directory")?;
        fs::write(&path, html).with_context(|| format!("writing {}", path.display()))?;
    }
    println!("explained {} documents with {}", docs.len(), method.name());
    Ok(())
}

fn faithfulness(a: crate::FaithfulnessArgs) -> Outcome {
    let ctx = resolve(&a.common, |c| {
        if let Some(p) = a.p {
            c.faithfulness.p = p;
        }
        if let Some(m) = a.method {
            c.explain.method = m;
        }
        if let Some(s) = a.sufficiency {
            c.faithfulness.sufficiency = s;
        }
    })?;
    write_manifest(&ctx, "faithfulness", json!({ "model": a.target.model, "data": a.target.data }))?;
    let model = SavedModel::load(&a.target.model)?;
    let corpus = load_for_model(&ctx, &a.target, &model)?;
    let name = a.target.model.display().to_string();
    let report = faithfulness_report(&model.classifier, &name, &corpus, &ctx.cfg.faithfulness_config())?;
    write_json(&ctx.path("faithfulness.json"), &report)?;
    println!(
        "comprehensiveness {:.4}, sufficiency {:.4}, match rate {}",
        report.mean_e,
        report.mean_s,
        report.match_rate.map_or("n/a".into(), |m| format!("{m:.4}"))
    );
    Ok(())
}

fn ensemble(a: crate::EnsembleArgs) -> Outcome {
    let ctx = resolve(&a.common, |c| {
        if let Some(p) = &a.train {
            c.data.train = Some(p.clone());
        }
        if let Some(p) = &a.test {
            c.data.test = Some(p.clone());
        }
        if let Some(m) = a.folds {
            c.ensemble.folds = m;
        }
        if let Some(r) = a.rule {
            c.ensemble.rule = r;
        }
        if a.grid_search {
            c.ensemble.grid_search = true;
        }
        if let Some(k) = a.top_k {
            c.ensemble.top_k = k;
        }
    })?;
    write_manifest(
        &ctx,
        "ensemble",
        json!({ "candidates": a.candidates, "validation": a.validation }),
    )?;
    if a.candidates.is_empty() {
        cross_validated(&ctx)
    } else {
        from_candidates(&ctx, &a.candidates, a.validation.as_deref())
    }
}

fn cross_validated(ctx: &Ctx) -> Outcome {
    let e = &ctx.cfg.ensemble;
    let (train, test) = load_splits(ctx)?;
    let table = embeddings(ctx)?;
    let cv = cv_train_with(
        &train,
        e.folds,
        &ctx.cfg.classifier_config(),
        ctx.cfg.seed_for(Stream::Folds),
        table.as_ref(),
    )?;
    let mut model = cv.model;
    model.rule = e.rule;
    let mut grid = None;
    if e.grid_search {
        let (weights, f1) = grid_search_weights(&model, &train, e.grid_steps)?;
        model = EnsembleModel::new(model.members, weights, e.rule)?;
        grid = Some(f1);
    }
    let scores: Vec<Option<CandidateScore>> = cv.folds.iter().map(|f| Some(f.score.clone())).collect();
    EnsembleManifest::save(&model, &scores, ctx.path("ensemble.json"))?;
    let (_, metrics) = evaluate(&model, &test)?;
    let members = model
        .members
        .iter()
        .map(|m| evaluate(m, &test).map(|(_, r)| r.macro_f1))
        .collect::<hatelens::Result<Vec<_>>>()?;
    write_json(
        &ctx.path("ensemble_report.json"),
        &json!({
            "rule": model.rule,
            "weights": model.weights,
            "folds": cv.folds.iter().map(|f| json!({
                "fold": f.fold, "train_size": f.train_size, "held_out": f.held_out.len(), "score": f.score,
            })).collect::<Vec<_>>(),
            "grid_search_macro_f1": grid,
            "member_test_macro_f1": members,
            "test_metrics": metrics,
        }),
    )?;
    println!(
        "{}-fold ensemble: held-out macro-F1 {:.4} (best member {:.4})",
        e.folds,
        metrics.macro_f1,
        members.iter().cloned().fold(0.0, f64::max)
    );
    Ok(())
}

fn from_candidates(ctx: &Ctx, paths: &[PathBuf], validation: Option<&Path>) -> Outcome {
    let models = paths
        .iter()
        .map(|p| SavedModel::load(p))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let names = &models[0].class_names;
    if models.iter().any(|m| &m.class_names != names) {
        return Err(usage("candidate models were trained on different class lists"));
    }
    let path = validation
        .or(ctx.cfg.data.test.as_deref())
        .ok_or_else(|| usage("no validation data: pass --validation or set [data].test"))?;
    let schema = CorpusSchema {
        classes: Some(names.clone()),
        ..ctx.cfg.schema()
    };
    let raw = load(path, &schema)?;
    let mut scores = Vec::with_capacity(models.len());
    for (p, m) in paths.iter().zip(&models) {
        let mut cfg = ctx.cfg.clone();
        cfg.preprocess = m.preprocess.clone();
        let corpus = raw.preprocess(&cfg.preprocess_config());
        scores.push(score_candidate(&p.display().to_string(), &m.classifier, &corpus)?);
    }
    let chosen = select_top_k(&scores, ctx.cfg.ensemble.top_k)?;
    let members: Vec<Classifier> = chosen
        .iter()
        .map(|s| {
            let i = scores.iter().position(|c| c.id == s.id).expect("selected from scores");
            models[i].classifier.clone()
        })
        .collect();
    let model = EnsembleModel::uniform(members, ctx.cfg.ensemble.rule)?;
    let kept: Vec<Option<CandidateScore>> = chosen.iter().cloned().map(Some).collect();
    EnsembleManifest::save(&model, &kept, ctx.path("ensemble.json"))?;
    write_json(
        &ctx.path("ensemble_report.json"),
        &json!({ "rule": model.rule, "candidates": scores, "selected": chosen }),
    )?;
    println!("selected {} of {} candidates", chosen.len(), scores.len());
    Ok(())
}

fn terms(a: crate::GlobalTermsArgs) -> Outcome {
    let ctx = resolve(&a.common, |c| {
        if let Some(m) = a.method {
            c.explain.method = m;
        }
        if let Some(k) = a.k {
            c.explain.top_k = k;
        }
    })?;
    write_manifest(&ctx, "global-terms", json!({ "model": a.target.model, "data": a.target.data }))?;
    let model = SavedModel::load(&a.target.model)?;
    let corpus = load_for_model(&ctx, &a.target, &model)?;
    let terms = global_terms(
        &model.classifier,
        &corpus,
        ctx.cfg.explain.method,
        ctx.cfg.explain.top_k,
        &ctx.cfg.lrp(),
    )?;
    write_json(&ctx.path("global_terms.json"), &terms)?;
    for t in &terms {
        let top: Vec<&str> = t.top.iter().map(|s| s.term.as_str()).collect();
        println!("{}: {}", t.class_name, top.join(" "));
    }
    Ok(())
}
