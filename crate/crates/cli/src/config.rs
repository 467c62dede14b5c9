//! Run configuration: a TOML file with one table per pipeline stage.
//!
//! Parsing never stops at the first problem. Unknown sections and keys,
//! type mismatches and failed cross-field checks are all collected and
//! reported together.

use std::fmt;
use std::path::{Path, PathBuf};

use hatelens::corpus::{CorpusSchema, PreprocessConfig};
use hatelens::ensemble::CombineRule;
use hatelens::explain::{LrpConfig, Method};
use hatelens::faithfulness::{FaithfulnessConfig, SufficiencyForm};
use hatelens::features::TfIdfConfig;
use hatelens::network::{presets, Optimizer, TrainConfig};
use hatelens::pipeline::{Architecture, ClassifierConfig};
use hatelens::rng::derive_seed;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub train: Option<PathBuf>,
    /// Held-out set; when absent the training file is split.
    pub test: Option<PathBuf>,
    pub test_fraction: f64,
    pub id_column: String,
    pub text_column: String,
    pub label_column: String,
    pub rationale_column: String,
    pub classes: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessSection {
    pub normalize_hashtags: bool,
    pub strip_emojis_mentions_duplicates: bool,
    pub lowercase: bool,
    pub min_df: usize,
    pub max_len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSection {
    pub architecture: Architecture,
    pub max_vocab: usize,
    pub embedding_dim: usize,
    pub conv_filters: usize,
    pub kernel_width: usize,
    pub pool_size: usize,
    pub recurrent_units: usize,
    pub dense_units: usize,
    pub dropout: f64,
    pub noise_std: f64,
    /// Inclusive character n-gram range for TF-IDF models; `[0, 0]` turns
    /// character features off.
    pub char_ngrams: [usize; 2],
    pub word_unigrams: bool,
    /// Pretrained vectors (`<count> <dim>` header, then one token per
    /// line) for the embedding layer of sequence models.
    pub embeddings: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSection {
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub clip_norm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainSection {
    pub method: Method,
    pub epsilon: f64,
    pub delta: f64,
    /// Terms per class and direction in `global-terms`.
    pub top_k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaithfulnessSection {
    pub p: f64,
    pub sufficiency: SufficiencyForm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSection {
    pub folds: usize,
    pub rule: CombineRule,
    /// Replace F1-proportional weights by a simplex grid search.
    pub grid_search: bool,
    pub grid_steps: usize,
    /// Members kept by candidate selection.
    pub top_k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSection {
    pub out: PathBuf,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub data: DataConfig,
    pub preprocess: PreprocessSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub explain: ExplainSection,
    pub faithfulness: FaithfulnessSection,
    pub ensemble: EnsembleSection,
    pub run: RunSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        let schema = CorpusSchema::default();
        let pre = PreprocessConfig::default();
        let hyper = presets::Hyper::default();
        let tfidf = TfIdfConfig::default();
        let train = TrainConfig::default();
        let lrp = LrpConfig::default();
        let faith = FaithfulnessConfig::default();
        RunConfig {
            data: DataConfig {
                train: None,
                test: None,
                test_fraction: 0.2,
                id_column: schema.id_column,
                text_column: schema.text_column,
                label_column: schema.label_column,
                rationale_column: schema.rationale_column,
                classes: None,
            },
            preprocess: PreprocessSection {
                normalize_hashtags: pre.normalize_hashtags,
                strip_emojis_mentions_duplicates: pre.strip_emojis_mentions_duplicates,
                lowercase: pre.lowercase,
                min_df: pre.min_df,
                max_len: pre.max_len,
            },
            model: ModelSection {
                architecture: Architecture::ConvLstm,
                max_vocab: 20_000,
                embedding_dim: hyper.embedding_dim,
                conv_filters: hyper.conv_filters,
                kernel_width: hyper.kernel_width,
                pool_size: hyper.pool_size,
                recurrent_units: hyper.recurrent_units,
                dense_units: hyper.dense_units,
                dropout: hyper.dropout,
                noise_std: hyper.noise_std,
                char_ngrams: tfidf.char_ngram_range.map_or([0, 0], |(a, b)| [a, b]),
                word_unigrams: tfidf.use_word_unigrams,
                embeddings: None,
            },
            train: TrainSection {
                optimizer: train.optimizer,
                learning_rate: train.learning_rate,
                epochs: train.epochs,
                batch_size: train.batch_size,
                clip_norm: train.clip_norm,
            },
            explain: ExplainSection {
                method: faith.method,
                epsilon: lrp.epsilon,
                delta: lrp.delta,
                top_k: 10,
            },
            faithfulness: FaithfulnessSection {
                p: faith.p,
                sufficiency: faith.sufficiency_form,
            },
            ensemble: EnsembleSection {
                folds: 5,
                rule: CombineRule::HardMajority,
                grid_search: false,
                grid_steps: 10,
                top_k: 3,
            },
            run: RunSection {
                out: PathBuf::from("out"),
                seed: 0,
            },
        }
    }
}

/// Every problem found in a configuration, in discovery order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub source: String,
    pub violations: Vec<String>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "invalid configuration {} ({} problems):", self.source, self.violations.len())?;
        for v in &self.violations {
            writeln!(f, "  - {v}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

struct Reader {
    table: toml::Table,
    violations: Vec<String>,
}

impl Reader {
    fn section(&mut self, name: &str, keys: &[&str]) -> toml::Table {
        match self.table.remove(name) {
            None => toml::Table::new(),
            Some(toml::Value::Table(t)) => {
                for key in t.keys().filter(|k| !keys.contains(&k.as_str())) {
                    self.violations.push(format!("unknown key [{name}].{key}"));
                }
                t
            }
            Some(other) => {
                self.violations
                    .push(format!("[{name}] must be a table, found {}", other.type_str()));
                toml::Table::new()
            }
        }
    }

    fn get<T: DeserializeOwned>(&mut self, section: &str, table: &toml::Table, key: &str, slot: &mut T) {
        if let Some(value) = table.get(key) {
            match value.clone().try_into::<T>() {
                Ok(v) => *slot = v,
                Err(e) => self.violations.push(format!(
                    "[{section}].{key}: {}",
                    e.to_string().trim().replace('\n', " ")
                )),
            }
        }
    }

    fn optional<T: DeserializeOwned>(&mut self, section: &str, table: &toml::Table, key: &str, slot: &mut Option<T>) {
        if let Some(value) = table.get(key) {
            match value.clone().try_into::<T>() {
                Ok(v) => *slot = Some(v),
                Err(e) => self.violations.push(format!(
                    "[{section}].{key}: {}",
                    e.to_string().trim().replace('\n', " ")
                )),
            }
        }
    }
}

const SECTIONS: &[&str] = &[
    "data",
    "preprocess",
    "model",
    "train",
    "explain",
    "faithfulness",
    "ensemble",
    "run",
];

/// Parses configuration text, fills defaults and runs the cross-field
/// checks.
pub fn parse_config(text: &str, source: &str) -> Result<RunConfig, ConfigError> {
    let fail = |violations| ConfigError {
        source: source.to_string(),
        violations,
    };
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| fail(vec![e.to_string().trim().replace('\n', " ")]))?;
    let mut r = Reader {
        table,
        violations: Vec::new(),
    };
    let mut unknown: Vec<String> = r
        .table
        .iter()
        .filter(|(k, _)| !SECTIONS.contains(&k.as_str()))
        .map(|(k, v)| {
            if v.is_table() {
                format!("unknown section [{k}]")
            } else {
                format!("unknown top-level key {k}")
            }
        })
        .collect();
    r.violations.append(&mut unknown);
    let mut c = RunConfig::default();

    let t = r.section(
        "data",
        &[
            "train",
            "test",
            "test_fraction",
            "id_column",
            "text_column",
            "label_column",
            "rationale_column",
            "classes",
        ],
    );
    r.optional("data", &t, "train", &mut c.data.train);
    r.optional("data", &t, "test", &mut c.data.test);
    r.get("data", &t, "test_fraction", &mut c.data.test_fraction);
    r.get("data", &t, "id_column", &mut c.data.id_column);
    r.get("data", &t, "text_column", &mut c.data.text_column);
    r.get("data", &t, "label_column", &mut c.data.label_column);
    r.get("data", &t, "rationale_column", &mut c.data.rationale_column);
    r.optional("data", &t, "classes", &mut c.data.classes);

    let t = r.section(
        "preprocess",
        &[
            "normalize_hashtags",
            "strip_emojis_mentions_duplicates",
            "lowercase",
            "min_df",
            "max_len",
        ],
    );
    r.get("preprocess", &t, "normalize_hashtags", &mut c.preprocess.normalize_hashtags);
    r.get(
        "preprocess",
        &t,
        "strip_emojis_mentions_duplicates",
        &mut c.preprocess.strip_emojis_mentions_duplicates,
    );
    r.get("preprocess", &t, "lowercase", &mut c.preprocess.lowercase);
    r.get("preprocess", &t, "min_df", &mut c.preprocess.min_df);
    r.get("preprocess", &t, "max_len", &mut c.preprocess.max_len);

    let t = r.section(
        "model",
        &[
            "architecture",
            "max_vocab",
            "embedding_dim",
            "conv_filters",
            "kernel_width",
            "pool_size",
            "recurrent_units",
            "dense_units",
            "dropout",
            "noise_std",
            "char_ngrams",
            "word_unigrams",
            "embeddings",
        ],
    );
    let m = &mut c.model;
    r.get("model", &t, "architecture", &mut m.architecture);
    r.get("model", &t, "max_vocab", &mut m.max_vocab);
    r.get("model", &t, "embedding_dim", &mut m.embedding_dim);
    r.get("model", &t, "conv_filters", &mut m.conv_filters);
    r.get("model", &t, "kernel_width", &mut m.kernel_width);
    r.get("model", &t, "pool_size", &mut m.pool_size);
    r.get("model", &t, "recurrent_units", &mut m.recurrent_units);
    r.get("model", &t, "dense_units", &mut m.dense_units);
    r.get("model", &t, "dropout", &mut m.dropout);
    r.get("model", &t, "noise_std", &mut m.noise_std);
    r.get("model", &t, "char_ngrams", &mut m.char_ngrams);
    r.get("model", &t, "word_unigrams", &mut m.word_unigrams);
    r.optional("model", &t, "embeddings", &mut m.embeddings);

    let t = r.section(
        "train",
        &["optimizer", "learning_rate", "epochs", "batch_size", "clip_norm"],
    );
    r.get("train", &t, "optimizer", &mut c.train.optimizer);
    r.get("train", &t, "learning_rate", &mut c.train.learning_rate);
    r.get("train", &t, "epochs", &mut c.train.epochs);
    r.get("train", &t, "batch_size", &mut c.train.batch_size);
    r.optional("train", &t, "clip_norm", &mut c.train.clip_norm);

    let t = r.section("explain", &["method", "epsilon", "delta", "top_k"]);
    r.get("explain", &t, "method", &mut c.explain.method);
    r.get("explain", &t, "epsilon", &mut c.explain.epsilon);
    r.get("explain", &t, "delta", &mut c.explain.delta);
    r.get("explain", &t, "top_k", &mut c.explain.top_k);

    let t = r.section("faithfulness", &["p", "sufficiency"]);
    r.get("faithfulness", &t, "p", &mut c.faithfulness.p);
    r.get("faithfulness", &t, "sufficiency", &mut c.faithfulness.sufficiency);

    let t = r.section("ensemble", &["folds", "rule", "grid_search", "grid_steps", "top_k"]);
    r.get("ensemble", &t, "folds", &mut c.ensemble.folds);
    r.get("ensemble", &t, "rule", &mut c.ensemble.rule);
    r.get("ensemble", &t, "grid_search", &mut c.ensemble.grid_search);
    r.get("ensemble", &t, "grid_steps", &mut c.ensemble.grid_steps);
    r.get("ensemble", &t, "top_k", &mut c.ensemble.top_k);

    let t = r.section("run", &["out", "seed"]);
    r.get("run", &t, "out", &mut c.run.out);
    r.get("run", &t, "seed", &mut c.run.seed);

    let mut violations = r.violations;
    violations.extend(c.check());
    if violations.is_empty() {
        Ok(c)
    } else {
        Err(fail(violations))
    }
}

/// Reads and validates a configuration file.
pub fn validate_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
        source: path.display().to_string(),
        violations: vec![format!("cannot read file: {e}")],
    })?;
    parse_config(&text, &path.display().to_string())
}

impl RunConfig {
    /// Cross-field and range checks. Empty when the configuration is usable.
    pub fn check(&self) -> Vec<String> {
        let mut v = Vec::new();
        let d = &self.data;
        if !(d.test_fraction > 0.0 && d.test_fraction < 1.0) {
            v.push(format!("[data].test_fraction {} must lie in (0, 1)", d.test_fraction));
        }
        if self.preprocess.max_len == 0 {
            v.push("[preprocess].max_len must be at least 1".into());
        }
        if self.preprocess.min_df == 0 {
            v.push("[preprocess].min_df must be at least 1".into());
        }
        let m = &self.model;
        if !(0.0..1.0).contains(&m.dropout) {
            v.push(format!("[model].dropout {} must lie in [0, 1)", m.dropout));
        }
        if !(m.noise_std >= 0.0 && m.noise_std.is_finite()) {
            v.push(format!("[model].noise_std {} must be non-negative", m.noise_std));
        }
        match m.char_ngrams {
            [0, 0] => {
                if !m.word_unigrams {
                    v.push("[model] enables neither character n-grams nor word unigrams".into());
                }
            }
            [lo, hi] if lo == 0 || lo > hi => {
                v.push(format!("[model].char_ngrams [{lo}, {hi}] is not a range 1 ≤ min ≤ max"));
            }
            _ => {}
        }
        if m.embeddings.is_some() && !m.architecture.is_sequence() {
            v.push(format!(
                "[model].embeddings needs a sequence architecture, not {}",
                m.architecture.name()
            ));
        }
        if self.preprocess.max_len > 0 {
            let spec = match m.architecture {
                Architecture::ConvLstm => Some(presets::conv_lstm(self.preprocess.max_len, 2, &self.hyper())),
                Architecture::Cnn => Some(presets::cnn(self.preprocess.max_len, 2, &self.hyper())),
                Architecture::BiLstm => Some(presets::bilstm(self.preprocess.max_len, 2, &self.hyper())),
                _ => None,
            };
            if let Some(Err(e)) = spec.map(|s| s.shapes()) {
                v.push(format!(
                    "[model].architecture {} does not fit [preprocess].max_len {}: {e}",
                    m.architecture.name(),
                    self.preprocess.max_len
                ));
            }
        }
        if let Err(e) = self.train_config().validate() {
            v.push(format!("[train]: {e}"));
        }
        if let Err(e) = self.lrp().validate() {
            v.push(format!("[explain]: {e}"));
        }
        if self.explain.top_k == 0 {
            v.push("[explain].top_k must be at least 1".into());
        }
        if !(self.faithfulness.p > 0.0 && self.faithfulness.p <= 1.0) {
            v.push(format!("[faithfulness].p {} must lie in (0, 1]", self.faithfulness.p));
        }
        let e = &self.ensemble;
        if e.folds < 2 {
            v.push(format!("[ensemble].folds {} must be at least 2", e.folds));
        }
        if e.grid_steps == 0 {
            v.push("[ensemble].grid_steps must be at least 1".into());
        }
        if e.top_k == 0 {
            v.push("[ensemble].top_k must be at least 1".into());
        }
        v
    }

    pub fn schema(&self) -> CorpusSchema {
        CorpusSchema {
            id_column: self.data.id_column.clone(),
            text_column: self.data.text_column.clone(),
            label_column: self.data.label_column.clone(),
            rationale_column: self.data.rationale_column.clone(),
            classes: self.data.classes.clone(),
        }
    }

    pub fn preprocess_config(&self) -> PreprocessConfig {
        PreprocessConfig {
            normalize_hashtags: self.preprocess.normalize_hashtags,
            strip_emojis_mentions_duplicates: self.preprocess.strip_emojis_mentions_duplicates,
            lowercase: self.preprocess.lowercase,
            stemmer: None,
            min_df: self.preprocess.min_df,
            max_len: self.preprocess.max_len,
        }
    }

    pub fn hyper(&self) -> presets::Hyper {
        let m = &self.model;
        presets::Hyper {
            embedding_dim: m.embedding_dim,
            conv_filters: m.conv_filters,
            kernel_width: m.kernel_width,
            pool_size: m.pool_size,
            recurrent_units: m.recurrent_units,
            dense_units: m.dense_units,
            dropout: m.dropout,
            noise_std: m.noise_std,
        }
    }

    /// Seed of a named stream derived from the root seed.
    pub fn seed_for(&self, stream: Stream) -> u64 {
        derive_seed(self.run.seed, stream as u64)
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            optimizer: t.optimizer,
            learning_rate: t.learning_rate,
            epochs: t.epochs,
            batch_size: t.batch_size,
            seed: self.seed_for(Stream::Train),
            clip_norm: t.clip_norm,
        }
    }

    pub fn classifier_config(&self) -> ClassifierConfig {
        let m = &self.model;
        ClassifierConfig {
            architecture: m.architecture,
            hyper: self.hyper(),
            max_len: self.preprocess.max_len,
            max_vocab: m.max_vocab,
            tfidf: TfIdfConfig {
                char_ngram_range: match m.char_ngrams {
                    [0, 0] => None,
                    [a, b] => Some((a, b)),
                },
                use_word_unigrams: m.word_unigrams,
            },
            train: self.train_config(),
            init_seed: self.seed_for(Stream::Init),
        }
    }

    pub fn lrp(&self) -> LrpConfig {
        LrpConfig {
            epsilon: self.explain.epsilon,
            delta: self.explain.delta,
        }
    }

    pub fn faithfulness_config(&self) -> FaithfulnessConfig {
        FaithfulnessConfig {
            method: self.explain.method,
            p: self.faithfulness.p,
            lrp: self.lrp(),
            sufficiency_form: self.faithfulness.sufficiency,
        }
    }
}

/// Independent random streams below the root seed.
#[derive(Debug, Clone, Copy)]
pub enum Stream {
    Init = 1,
    Train = 2,
    Split = 3,
    Folds = 4,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn guide_example_is_valid() {
        let guide = include_str!("../../../book/src/cli.md");
        let start = guide.find("```toml\n").unwrap() + "```toml\n".len();
        let end = start + guide[start..].find("```").unwrap();
        let c = parse_config(&guide[start..end], "guide").unwrap();
        assert_eq!(c.model.architecture, Architecture::ConvLstm);
        assert_eq!(c.run.seed, 7);
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse_config("[data]\ntrain = \"t.csv\"\n", "inline").unwrap();
        assert_eq!(c.preprocess.max_len, 100);
        assert_eq!(c.preprocess.min_df, 5);
        assert_eq!(c.faithfulness.p, 0.2);
        assert_eq!(c.data.train, Some(PathBuf::from("t.csv")));
        assert_eq!(parse_config("", "empty").unwrap(), RunConfig::default());
    }

    #[test]
    fn zero_max_len_is_rejected() {
        let e = parse_config("[preprocess]\nmax_len = 0\n", "inline").unwrap_err();
        assert!(e.violations.iter().any(|v| v.contains("max_len")), "{e}");
    }

    #[test]
    fn all_violations_are_reported_together() {
        let text = "[model]\narchitecture = \"transformer\"\ncolour = 3\n[faithfulness]\np = 1.5\n[bogus]\nx = 1\n";
        let e = parse_config(text, "inline").unwrap_err();
        assert_eq!(e.violations.len(), 4, "{e}");
        let all = e.to_string();
        for needle in ["[bogus]", "colour", "architecture", "[faithfulness].p"] {
            assert!(all.contains(needle), "{needle} missing from {all}");
        }
    }

    #[test]
    fn type_mismatch_names_the_key() {
        let e = parse_config("[train]\nepochs = \"ten\"\nlearning_rate = -1.0\n", "inline").unwrap_err();
        assert_eq!(e.violations.len(), 2, "{e}");
        assert!(e.violations[0].starts_with("[train].epochs"));
    }

    #[test]
    fn architecture_must_fit_sequence_length() {
        let e = parse_config("[preprocess]\nmax_len = 1\n[model]\npool_size = 4\n", "inline").unwrap_err();
        assert!(e.violations.iter().any(|v| v.contains("does not fit")), "{e}");
        assert!(parse_config("[preprocess]\nmax_len = 1\n[model]\narchitecture = \"naive_bayes\"\n", "inline").is_ok());
    }

    #[test]
    fn normalized_config_round_trips_through_toml() {
        let c = RunConfig::default();
        let text = toml::to_string(&c).unwrap();
        assert_eq!(parse_config(&text, "roundtrip").unwrap(), c);
    }
}
