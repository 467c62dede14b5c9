//! Token-level attribution: sensitivity analysis, relevance propagation,
//! leave-one-out, permutation importance, global term rankings and heat maps.

mod heatmap;
mod lrp;
mod permutation;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use heatmap::{render_heatmap, write_heatmap};
pub use lrp::{propagate, redistribute, sign, LrpConfig, LrpTrace};
pub use permutation::{model_rows, permutation_importance, predict_rows, token_rows, PermutationReport};

use crate::corpus::{Document, LabeledCorpus};
use crate::error::{Error, Result};
use crate::network::{Mode, ModelGraph, ModelInput};
use crate::pipeline::{Classifier, SequenceClassifier, TextClassifier};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Sa,
    Lrp,
    Loo,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Sa => "sa",
            Method::Lrp => "lrp",
            Method::Loo => "loo",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sa" => Ok(Method::Sa),
            "lrp" => Ok(Method::Lrp),
            "loo" => Ok(Method::Loo),
            other => Err(Error::Parameter(format!("unknown explainer {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenScore {
    pub pos: usize,
    pub token: String,
    pub score: f64,
}

/// Per-token relevance of one document for one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceMap {
    pub doc_id: String,
    pub class: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_name: Option<String>,
    pub method: Method,
    /// One entry per real token that reached the model, in position order.
    pub tokens: Vec<TokenScore>,
    pub total: f64,
}

impl RelevanceMap {
    fn from_scores(doc: &Document, class: usize, method: Method, scores: &[f64], total: f64) -> Self {
        RelevanceMap {
            doc_id: doc.id.clone(),
            class,
            class_name: None,
            method,
            tokens: scores
                .iter()
                .enumerate()
                .map(|(pos, &score)| TokenScore {
                    pos,
                    token: doc.tokens[pos].clone(),
                    score,
                })
                .collect(),
            total,
        }
    }

    pub fn with_class_name(mut self, name: impl Into<String>) -> Self {
        self.class_name = Some(name.into());
        self
    }

    pub fn scores(&self) -> Vec<f64> {
        self.tokens.iter().map(|t| t.score).collect()
    }

    /// Positions ordered by decreasing score (ties to the earlier position).
    pub fn ranking(&self) -> Vec<usize> {
        let mut order: Vec<usize> = self.tokens.iter().map(|t| t.pos).collect();
        let score: BTreeMap<usize, f64> = self.tokens.iter().map(|t| (t.pos, t.score)).collect();
        order.sort_by(|a, b| score[b].total_cmp(&score[a]).then(a.cmp(b)));
        order
    }
}

fn check_class(model: &ModelGraph, c: usize) -> Result<()> {
    let k = model.num_classes();
    if c >= k {
        return Err(Error::Parameter(format!("class {c} outside {k} classes")));
    }
    Ok(())
}

/// Squared input gradient `(∂f_c/∂x_d)²` over the embedded input.
pub fn sa_coordinates(model: &ModelGraph, input: &ModelInput, c: usize) -> Result<Tensor> {
    let grad = model.input_gradient(input, c)?;
    let data = grad.as_slice().iter().map(|g| g * g).collect();
    Ok(Tensor::from_vec(grad.rows(), grad.cols(), data))
}

/// Sensitivity analysis. A token scores the sum of its squared partials and
/// `total` is the squared gradient norm over real-token coordinates.
pub fn sa_relevance(clf: &SequenceClassifier, doc: &Document, c: usize) -> Result<RelevanceMap> {
    check_class(&clf.model, c)?;
    let sq = sa_coordinates(&clf.model, &clf.encode(&doc.tokens), c)?;
    let n = clf.visible_len(&doc.tokens);
    let scores: Vec<f64> = sq.row_sums().into_iter().take(n).collect();
    let total = sq.as_slice()[..n * sq.cols()].iter().sum();
    Ok(RelevanceMap::from_scores(doc, c, Method::Sa, &scores, total))
}

/// Epsilon-rule LRP seeded with the pre-softmax score `f_c(x)`. Token scores
/// sum the relevance of their embedding coordinates.
pub fn lrp_relevance(clf: &SequenceClassifier, doc: &Document, c: usize, cfg: &LrpConfig) -> Result<RelevanceMap> {
    check_class(&clf.model, c)?;
    let trace = clf.model.forward(&clf.encode(&doc.tokens), Mode::Eval)?;
    let relevance = propagate(&clf.model, &trace, c, cfg)?;
    let n = clf.visible_len(&doc.tokens);
    let scores: Vec<f64> = relevance.input_relevance().row_sums().into_iter().take(n).collect();
    let total = scores.iter().sum();
    Ok(RelevanceMap::from_scores(doc, c, Method::Lrp, &scores, total))
}

/// `p_c(doc) − p_c(doc without token t)` for every token. A single-token
/// document is compared against the empty document.
pub fn leave_one_out(clf: &dyn TextClassifier, doc: &Document, c: usize) -> Result<RelevanceMap> {
    let k = clf.num_classes();
    if c >= k {
        return Err(Error::Parameter(format!("class {c} outside {k} classes")));
    }
    let base = clf.predict_proba(&doc.tokens)?[c];
    let mut scores = Vec::with_capacity(doc.tokens.len());
    for t in 0..doc.tokens.len() {
        let mut reduced = doc.tokens.clone();
        reduced.remove(t);
        scores.push(base - clf.predict_proba(&reduced)?[c]);
    }
    let total = scores.iter().sum();
    Ok(RelevanceMap::from_scores(doc, c, Method::Loo, &scores, total))
}

/// Dispatches to the requested explainer. SA and LRP need a sequence model.
pub fn explain(clf: &Classifier, doc: &Document, c: usize, method: Method, lrp: &LrpConfig) -> Result<RelevanceMap> {
    match method {
        Method::Loo => leave_one_out(clf, doc, c),
        Method::Sa | Method::Lrp => {
            let seq = clf.as_sequence().ok_or_else(|| {
                Error::Parameter(format!("{} needs a token-sequence model", method.name()))
            })?;
            if method == Method::Sa {
                sa_relevance(seq, doc, c)
            } else {
                lrp_relevance(seq, doc, c, lrp)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermScore {
    pub term: String,
    pub mean: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassTerms {
    pub class: usize,
    pub class_name: String,
    /// Correctly classified documents the means were taken over.
    pub documents: usize,
    /// Set when no document of the class was classified correctly.
    pub empty: bool,
    pub top: Vec<TermScore>,
    pub bottom: Vec<TermScore>,
}

/// Per class, the mean relevance of each token type over the correctly
/// classified documents of that class (explained for their own class),
/// ranked into the `k` highest and `k` lowest terms. Ties rank
/// lexicographically.
pub fn global_terms(
    clf: &Classifier,
    corpus: &LabeledCorpus,
    method: Method,
    k: usize,
    lrp: &LrpConfig,
) -> Result<Vec<ClassTerms>> {
    if corpus.is_empty() {
        return Err(Error::NoDocuments);
    }
    let num_classes = corpus.num_classes();
    let mut sums: Vec<BTreeMap<String, (f64, usize)>> = vec![BTreeMap::new(); num_classes];
    let mut docs = vec![0usize; num_classes];
    for doc in &corpus.documents {
        if doc.tokens.is_empty() || clf.predict(&doc.tokens)? != doc.label {
            continue;
        }
        let rel = explain(clf, doc, doc.label, method, lrp)?;
        docs[doc.label] += 1;
        for t in &rel.tokens {
            let e = sums[doc.label].entry(t.token.clone()).or_insert((0.0, 0));
            e.0 += t.score;
            e.1 += 1;
        }
    }
    Ok(sums
        .into_iter()
        .enumerate()
        .map(|(c, terms)| {
            let mut ranked: Vec<TermScore> = terms
                .into_iter()
                .map(|(term, (sum, count))| TermScore {
                    term,
                    mean: sum / count as f64,
                    count,
                })
                .collect();
            ranked.sort_by(|a, b| b.mean.total_cmp(&a.mean).then_with(|| a.term.cmp(&b.term)));
            let top = ranked.iter().take(k).cloned().collect();
            let mut bottom: Vec<TermScore> = ranked.iter().rev().take(k).cloned().collect();
            bottom.sort_by(|a, b| a.mean.total_cmp(&b.mean).then_with(|| a.term.cmp(&b.term)));
            ClassTerms {
                class: c,
                class_name: corpus.class_names[c].clone(),
                documents: docs[c],
                empty: docs[c] == 0,
                top,
                bottom,
            }
        })
        .collect())
}
