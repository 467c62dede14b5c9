//! Labeled text corpora: loading, preprocessing, filtering, splitting and
//! synthetic generation.

mod io;
mod split;
mod synth;
mod text;

use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{load_corpus, read_corpus, write_corpus, CorpusSchema};
pub use split::{split_train_test, stratified_folds};
pub use synth::{synth_corpus, SynthSpec};
pub use text::{preprocess, preprocess_tokens, tokenize, PreprocessConfig, Stemmer};

/// Reserved padding token. Never produced by [`tokenize`].
pub const PAD: &str = "<pad>";
/// Reserved out-of-vocabulary token.
pub const UNK: &str = "<unk>";

/// The four target categories of the default schema.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HateClass {
    Personal = 0,
    Political = 1,
    Religious = 2,
    Geopolitical = 3,
}

impl HateClass {
    pub const ALL: [HateClass; 4] = [
        HateClass::Personal,
        HateClass::Political,
        HateClass::Religious,
        HateClass::Geopolitical,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            HateClass::Personal => "personal",
            HateClass::Political => "political",
            HateClass::Religious => "religious",
            HateClass::Geopolitical => "geopolitical",
        }
    }

    /// Class names in index order.
    pub fn names() -> Vec<String> {
        Self::ALL.iter().map(|c| c.name().to_string()).collect()
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub raw: String,
    pub tokens: Vec<String>,
    pub label: usize,
    /// Positions into `tokens` that justify the label.
    pub gold_rationale: Option<BTreeSet<usize>>,
}

impl Document {
    pub fn new(id: impl Into<String>, raw: impl Into<String>, label: usize) -> Self {
        let raw = raw.into();
        Document {
            id: id.into(),
            tokens: tokenize(&raw),
            raw,
            label,
            gold_rationale: None,
        }
    }

    pub fn from_tokens(id: impl Into<String>, tokens: Vec<String>, label: usize) -> Self {
        Document {
            id: id.into(),
            raw: tokens.join(" "),
            tokens,
            label,
            gold_rationale: None,
        }
    }

    pub fn with_rationale(mut self, positions: impl IntoIterator<Item = usize>) -> Self {
        self.gold_rationale = Some(positions.into_iter().collect());
        self
    }

    /// True when preprocessing left no tokens. Empty documents stay in the
    /// corpus so counts remain auditable.
    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Keeps the tokens whose position satisfies `keep`, remapping the gold
    /// rationale onto surviving positions.
    pub(crate) fn retain_positions(&self, keep: impl Fn(usize, &str) -> bool) -> Document {
        let mut remap = HashMap::new();
        let mut tokens = Vec::new();
        for (pos, tok) in self.tokens.iter().enumerate() {
            if keep(pos, tok) {
                remap.insert(pos, tokens.len());
                tokens.push(tok.clone());
            }
        }
        let gold_rationale = self
            .gold_rationale
            .as_ref()
            .map(|r| r.iter().filter_map(|p| remap.get(p).copied()).collect());
        Document {
            id: self.id.clone(),
            raw: self.raw.clone(),
            tokens,
            label: self.label,
            gold_rationale,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledCorpus {
    pub documents: Vec<Document>,
    /// Class names in index order; `K = class_names.len()`.
    pub class_names: Vec<String>,
    pub provenance: String,
}

impl LabeledCorpus {
    /// Validates labels, ids and rationale positions.
    pub fn new(
        documents: Vec<Document>,
        class_names: Vec<String>,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        if class_names.len() < 2 {
            return Err(Error::Corpus(format!(
                "need at least 2 classes, got {}",
                class_names.len()
            )));
        }
        let mut ids = HashSet::new();
        for doc in &documents {
            if doc.label >= class_names.len() {
                return Err(Error::Corpus(format!(
                    "document {} has label {} but K = {}",
                    doc.id,
                    doc.label,
                    class_names.len()
                )));
            }
            if !ids.insert(doc.id.as_str()) {
                return Err(Error::Corpus(format!("duplicate document id {}", doc.id)));
            }
            if let Some(r) = &doc.gold_rationale {
                if let Some(&p) = r.iter().find(|&&p| p >= doc.tokens.len()) {
                    return Err(Error::Corpus(format!(
                        "document {} has rationale position {} but only {} tokens",
                        doc.id,
                        p,
                        doc.tokens.len()
                    )));
                }
            }
        }
        Ok(LabeledCorpus {
            documents,
            class_names,
            provenance: provenance.into(),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.documents.iter().map(|d| d.label).collect()
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|c| c == name)
    }

    pub fn find(&self, id: &str) -> Option<&Document> {
        self.documents.iter().find(|d| d.id == id)
    }

    /// Documents whose tokens were all removed by preprocessing or filtering.
    pub fn empty_documents(&self) -> Vec<&str> {
        self.documents
            .iter()
            .filter(|d| d.is_empty())
            .map(|d| d.id.as_str())
            .collect()
    }

    /// A corpus over the documents at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize], provenance: impl Into<String>) -> LabeledCorpus {
        LabeledCorpus {
            documents: indices.iter().map(|&i| self.documents[i].clone()).collect(),
            class_names: self.class_names.clone(),
            provenance: provenance.into(),
        }
    }

    /// Applies token-level preprocessing to every document, remapping gold
    /// rationales onto the surviving tokens.
    pub fn preprocess(&self, config: &PreprocessConfig) -> LabeledCorpus {
        let documents = self
            .documents
            .iter()
            .map(|doc| {
                let kept = preprocess_tokens(&doc.tokens, config);
                let remap: HashMap<usize, usize> =
                    kept.iter().enumerate().map(|(new, (_, old))| (*old, new)).collect();
                Document {
                    id: doc.id.clone(),
                    raw: doc.raw.clone(),
                    tokens: kept.into_iter().map(|(t, _)| t).collect(),
                    label: doc.label,
                    gold_rationale: doc
                        .gold_rationale
                        .as_ref()
                        .map(|r| r.iter().filter_map(|p| remap.get(p).copied()).collect()),
                }
            })
            .collect();
        LabeledCorpus {
            documents,
            class_names: self.class_names.clone(),
            provenance: format!("{} | preprocessed", self.provenance),
        }
    }
}

/// Number of documents containing each token type.
pub fn document_frequencies(documents: &[Document]) -> HashMap<&str, usize> {
    let mut df: HashMap<&str, usize> = HashMap::new();
    for doc in documents {
        let seen: HashSet<&str> = doc.tokens.iter().map(String::as_str).collect();
        for tok in seen {
            *df.entry(tok).or_default() += 1;
        }
    }
    df
}

/// Removes token types whose document frequency is below `min_df`.
///
/// Documents reduced to zero tokens are kept (see [`Document::is_empty`]).
pub fn filter_infrequent(corpus: &LabeledCorpus, min_df: usize) -> LabeledCorpus {
    let min_df = min_df.max(1);
    let df = document_frequencies(&corpus.documents);
    let documents = corpus
        .documents
        .iter()
        .map(|doc| doc.retain_positions(|_, tok| df.get(tok).copied().unwrap_or(0) >= min_df))
        .collect();
    LabeledCorpus {
        documents,
        class_names: corpus.class_names.clone(),
        provenance: format!("{} | min_df={min_df}", corpus.provenance),
    }
}

/// A fixed-length token sequence and its mask of real (non-pad) positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FittedSequence<T> {
    pub tokens: Vec<T>,
    pub mask: Vec<bool>,
}

impl<T> FittedSequence<T> {
    pub fn real_len(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Truncates at the tail or pads with `pad` so the result has exactly
/// `max_len` entries.
pub fn fit_length_with<T: Clone>(tokens: &[T], max_len: usize, pad: T) -> FittedSequence<T> {
    let real = tokens.len().min(max_len);
    let mut out: Vec<T> = tokens[..real].to_vec();
    out.resize(max_len, pad);
    let mut mask = vec![true; real];
    mask.resize(max_len, false);
    FittedSequence { tokens: out, mask }
}

/// [`fit_length_with`] for string tokens, padding with [`PAD`].
pub fn fit_length(tokens: &[String], max_len: usize) -> FittedSequence<String> {
    fit_length_with(tokens, max_len, PAD.to_string())
}
