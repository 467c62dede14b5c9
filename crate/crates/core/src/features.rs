//! Vocabularies, TF-IDF featurization and pretrained embedding tables.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{fit_length_with, Document, LabeledCorpus, PAD, UNK};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const PAD_INDEX: usize = 0;
pub const UNK_INDEX: usize = 1;

/// Dense token indices. Index 0 is [`PAD`], index 1 is [`UNK`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "Vec<String>", try_from = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = Error;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[PAD_INDEX] != PAD || tokens[UNK_INDEX] != UNK {
            return Err(Error::Checkpoint("vocabulary must start with <pad>, <unk>".into()));
        }
        let index: HashMap<String, usize> = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        if index.len() != tokens.len() {
            return Err(Error::Checkpoint("vocabulary has duplicate tokens".into()));
        }
        Ok(Vocabulary { tokens, index })
    }
}

impl Vocabulary {
    /// Keeps the `max_size` most frequent tokens (ties broken
    /// lexicographically) plus the two specials.
    pub fn build(corpus: &LabeledCorpus, max_size: usize) -> Result<Self> {
        let mut freq: HashMap<&str, usize> = HashMap::new();
        for doc in &corpus.documents {
            for tok in &doc.tokens {
                if tok != PAD && tok != UNK {
                    *freq.entry(tok.as_str()).or_default() += 1;
                }
            }
        }
        if freq.is_empty() {
            return Err(Error::EmptyVocabulary);
        }
        let mut ranked: Vec<(&str, usize)> = freq.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(max_size);
        let tokens: Vec<String> = [PAD, UNK]
            .into_iter()
            .chain(ranked.into_iter().map(|(t, _)| t))
            .map(String::from)
            .collect();
        Vocabulary::try_from(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }

    pub fn index_of(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_INDEX)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.index_of(t)).collect()
    }

    /// Encodes and truncates/pads to `max_len` with [`PAD_INDEX`].
    pub fn encode_fitted(&self, tokens: &[String], max_len: usize) -> Vec<usize> {
        fit_length_with(&self.encode(tokens), max_len, PAD_INDEX).tokens
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TfIdfConfig {
    /// Inclusive character n-gram range; `None` disables character features.
    pub char_ngram_range: Option<(usize, usize)>,
    pub use_word_unigrams: bool,
}

impl Default for TfIdfConfig {
    fn default() -> Self {
        TfIdfConfig {
            char_ngram_range: Some((2, 5)),
            use_word_unigrams: true,
        }
    }
}

/// Sparse vector with entries sorted by index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    pub dim: usize,
    pub entries: Vec<(usize, f64)>,
}

impl SparseVector {
    pub fn to_dense(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for &(i, x) in &self.entries {
            v[i] = x;
        }
        v
    }

    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|(_, x)| x * x).sum::<f64>().sqrt()
    }
}

/// Feature counts of one document. Word features are prefixed `w:` and
/// character n-grams `c:`; n-grams run over the space-joined tokens.
pub fn extract_features(tokens: &[String], config: &TfIdfConfig) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    if config.use_word_unigrams {
        for tok in tokens {
            *counts.entry(format!("w:{tok}")).or_default() += 1;
        }
    }
    if let Some((lo, hi)) = config.char_ngram_range {
        let chars: Vec<char> = tokens.join(" ").chars().collect();
        for n in lo.max(1)..=hi {
            for window in chars.windows(n) {
                let gram: String = window.iter().collect();
                *counts.entry(format!("c:{gram}")).or_default() += 1;
            }
        }
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "TfIdfRepr")]
pub struct TfIdfModel {
    pub config: TfIdfConfig,
    /// Feature names in index order.
    pub features: Vec<String>,
    pub document_frequency: Vec<usize>,
    pub num_documents: usize,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

#[derive(Deserialize)]
struct TfIdfRepr {
    config: TfIdfConfig,
    features: Vec<String>,
    document_frequency: Vec<usize>,
    num_documents: usize,
}

impl From<TfIdfRepr> for TfIdfModel {
    fn from(r: TfIdfRepr) -> Self {
        let mut model = TfIdfModel {
            config: r.config,
            features: r.features,
            document_frequency: r.document_frequency,
            num_documents: r.num_documents,
            index: HashMap::new(),
        };
        model.rebuild_index();
        model
    }
}

impl TfIdfModel {
    pub fn fit(corpus: &LabeledCorpus, config: TfIdfConfig) -> Result<Self> {
        if let Some((lo, hi)) = config.char_ngram_range {
            if lo == 0 || lo > hi {
                return Err(Error::Parameter(format!("invalid n-gram range ({lo}, {hi})")));
            }
        }
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        for doc in &corpus.documents {
            for feature in extract_features(&doc.tokens, &config).into_keys() {
                *df.entry(feature).or_default() += 1;
            }
        }
        let (features, document_frequency): (Vec<String>, Vec<usize>) = df.into_iter().unzip();
        let mut model = TfIdfModel {
            config,
            features,
            document_frequency,
            num_documents: corpus.len(),
            index: HashMap::new(),
        };
        model.rebuild_index();
        Ok(model)
    }

    fn rebuild_index(&mut self) {
        self.index = self
            .features
            .iter()
            .enumerate()
            .map(|(i, f)| (f.clone(), i))
            .collect();
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    /// Smoothed inverse document frequency `ln((1+N)/(1+df)) + 1`.
    pub fn idf(&self, feature: usize) -> f64 {
        let n = self.num_documents as f64;
        let df = self.document_frequency[feature] as f64;
        ((1.0 + n) / (1.0 + df)).ln() + 1.0
    }

    /// `tf · idf`, L2-normalized. Features unseen during fitting are dropped;
    /// a document with no known feature maps to the zero vector.
    pub fn transform_tokens(&self, tokens: &[String]) -> SparseVector {
        let mut entries: Vec<(usize, f64)> = extract_features(tokens, &self.config)
            .into_iter()
            .filter_map(|(name, tf)| {
                self.feature_index(&name)
                    .map(|i| (i, tf as f64 * self.idf(i)))
            })
            .collect();
        entries.sort_unstable_by_key(|&(i, _)| i);
        let norm = entries.iter().map(|(_, x)| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for (_, x) in &mut entries {
                *x /= norm;
            }
        }
        SparseVector {
            dim: self.dim(),
            entries,
        }
    }

    pub fn transform(&self, doc: &Document) -> SparseVector {
        self.transform_tokens(&doc.tokens)
    }
}

/// What [`EmbeddingTable::lookup`] returns for unknown tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Fallback {
    Zeros,
    Vector(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
    fallback: Fallback,
    zeros: Vec<f64>,
}

impl EmbeddingTable {
    pub fn new(dim: usize, vectors: HashMap<String, Vec<f64>>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Parameter("embedding dimension must be positive".into()));
        }
        if let Some((tok, v)) = vectors.iter().find(|(_, v)| v.len() != dim) {
            return Err(Error::Parameter(format!(
                "vector for {tok:?} has length {}, expected {dim}",
                v.len()
            )));
        }
        Ok(EmbeddingTable {
            dim,
            vectors,
            fallback: Fallback::Zeros,
            zeros: vec![0.0; dim],
        })
    }

    /// Parses the plain-text vector format: a `<count> <dim>` header, then
    /// one `<token> <f1> ... <fdim>` line per token.
    pub fn read(reader: impl Read) -> Result<Self> {
        let mut lines = BufReader::new(reader).lines();
        let header = lines
            .next()
            .ok_or(Error::Format {
                line: 1,
                message: "missing header".into(),
            })?
            .map_err(|e| Error::io("<embeddings>", e))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let parse_header = |s: &str| {
            s.parse::<usize>().map_err(|_| Error::Format {
                line: 1,
                message: format!("bad header field {s:?}"),
            })
        };
        if fields.len() != 2 {
            return Err(Error::Format {
                line: 1,
                message: "header must be \"<count> <dim>\"".into(),
            });
        }
        let (count, dim) = (parse_header(fields[0])?, parse_header(fields[1])?);
        let mut vectors = HashMap::with_capacity(count);
        let mut rows = 0;
        for (i, line) in lines.enumerate() {
            let line_no = i + 2;
            let line = line.map_err(|e| Error::io("<embeddings>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(' ').filter(|s| !s.is_empty());
            let token = parts.next().unwrap_or_default().to_string();
            let values: Vec<f64> = parts
                .map(|s| {
                    s.trim().parse::<f64>().map_err(|_| Error::Format {
                        line: line_no,
                        message: format!("bad float {s:?}"),
                    })
                })
                .collect::<Result<_>>()?;
            if values.len() != dim {
                return Err(Error::Format {
                    line: line_no,
                    message: format!("expected {dim} values, found {}", values.len()),
                });
            }
            vectors.insert(token, values);
            rows += 1;
        }
        if rows != count {
            return Err(Error::Format {
                line: rows + 1,
                message: format!("header declares {count} vectors, found {rows}"),
            });
        }
        Self::new(dim, vectors).map_err(|e| Error::Format {
            line: 1,
            message: e.to_string(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(file)
    }

    pub fn with_fallback(mut self, fallback: Fallback) -> Result<Self> {
        if let Fallback::Vector(v) = &fallback {
            if v.len() != self.dim {
                return Err(Error::Parameter("fallback vector has wrong dimension".into()));
            }
        }
        self.fallback = fallback;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(token).map(Vec::as_slice)
    }

    /// The token's vector, zeros for [`PAD`], else the fallback.
    pub fn lookup(&self, token: &str) -> &[f64] {
        if token == PAD {
            return &self.zeros;
        }
        match (self.vectors.get(token), &self.fallback) {
            (Some(v), _) => v,
            (None, Fallback::Zeros) => &self.zeros,
            (None, Fallback::Vector(v)) => v,
        }
    }

    /// Rows of an embedding matrix aligned with `vocab` (specials and
    /// missing tokens follow [`lookup`](Self::lookup)).
    pub fn matrix_for(&self, vocab: &Vocabulary) -> Tensor {
        let mut m = Tensor::zeros(vocab.len(), self.dim);
        for (i, tok) in vocab.tokens().iter().enumerate() {
            m.row_mut(i).copy_from_slice(self.lookup(tok));
        }
        m
    }
}

/// Stacks the vectors of `tokens` into a `len × dim` matrix.
pub fn embed_sequence(tokens: &[String], table: &EmbeddingTable) -> Tensor {
    let mut m = Tensor::zeros(tokens.len(), table.dim());
    for (r, tok) in tokens.iter().enumerate() {
        m.row_mut(r).copy_from_slice(table.lookup(tok));
    }
    m
}

/// Distinct tokens of a corpus, for quick membership checks.
pub fn token_set(corpus: &LabeledCorpus) -> HashSet<&str> {
    corpus
        .documents
        .iter()
        .flat_map(|d| d.tokens.iter().map(String::as_str))
        .collect()
}
