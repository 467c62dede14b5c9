//! Rationale extraction and faithfulness scores: comprehensiveness,
//! sufficiency and overlap with gold rationales.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, LabeledCorpus};
use crate::error::{Error, Result};
use crate::explain::{explain, LrpConfig, Method, RelevanceMap};
use crate::pipeline::{Classifier, TextClassifier};
use crate::rng::Rng;

/// Default fraction of tokens kept as rationale.
pub const DEFAULT_FRACTION: f64 = 0.2;

/// Minimum `|predicted ∩ gold| / |gold|` for a match.
pub const MATCH_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RationaleSource {
    Gold,
    Extracted,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rationale {
    pub doc_id: String,
    pub positions: BTreeSet<usize>,
    pub source: RationaleSource,
    /// `|positions| / token count`.
    pub fraction: f64,
}

impl Rationale {
    pub fn new(doc: &Document, positions: BTreeSet<usize>, source: RationaleSource) -> Result<Self> {
        if let Some(&bad) = positions.iter().find(|&&p| p >= doc.tokens.len()) {
            return Err(Error::Parameter(format!(
                "rationale position {bad} outside document {:?} of {} tokens",
                doc.id,
                doc.tokens.len()
            )));
        }
        let fraction = if doc.tokens.is_empty() {
            0.0
        } else {
            positions.len() as f64 / doc.tokens.len() as f64
        };
        Ok(Rationale {
            doc_id: doc.id.clone(),
            positions,
            source,
            fraction,
        })
    }

    pub fn gold(doc: &Document) -> Option<Self> {
        let positions = doc.gold_rationale.clone()?;
        Rationale::new(doc, positions, RationaleSource::Gold).ok()
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// `⌈p·len⌉`, treating products within rounding noise of an integer as
/// that integer (so `0.3·10` is 3).
pub fn rationale_size(p: f64, len: usize) -> usize {
    let x = p * len as f64;
    let nearest = x.round();
    let k = if (x - nearest).abs() < 1e-9 { nearest } else { x.ceil() };
    (k as usize).min(len)
}

fn check_fraction(p: f64) -> Result<()> {
    if p > 0.0 && p <= 1.0 {
        Ok(())
    } else {
        Err(Error::Parameter(format!("rationale fraction {p} outside (0, 1]")))
    }
}

/// The `⌈p·len⌉` tokens with the largest `|relevance|`, ties to the earlier
/// position. Tokens missing from `rel` count as zero.
pub fn extract_rationale(rel: &RelevanceMap, doc: &Document, p: f64) -> Result<Rationale> {
    check_fraction(p)?;
    if rel.doc_id != doc.id {
        return Err(Error::Parameter(format!(
            "relevance map of {:?} does not belong to document {:?}",
            rel.doc_id, doc.id
        )));
    }
    let mut scores = vec![0.0f64; doc.tokens.len()];
    for t in &rel.tokens {
        if let Some(s) = scores.get_mut(t.pos) {
            *s = t.score.abs();
        }
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let k = rationale_size(p, doc.tokens.len());
    Rationale::new(doc, order.into_iter().take(k).collect(), RationaleSource::Extracted)
}

/// `k` distinct positions drawn uniformly.
pub fn random_rationale(doc: &Document, k: usize, rng: &mut Rng) -> Rationale {
    let k = k.min(doc.tokens.len());
    let positions = sample(rng, doc.tokens.len(), k).into_iter().collect();
    Rationale::new(doc, positions, RationaleSource::Random).expect("sampled positions are in range")
}

/// Tokens outside `positions`, in their original order.
pub fn without_positions(tokens: &[String], positions: &BTreeSet<usize>) -> Vec<String> {
    tokens
        .iter()
        .enumerate()
        .filter(|(i, _)| !positions.contains(i))
        .map(|(_, t)| t.clone())
        .collect()
}

/// Tokens at `positions`, in their original order.
pub fn only_positions(tokens: &[String], positions: &BTreeSet<usize>) -> Vec<String> {
    positions.iter().filter_map(|&i| tokens.get(i).cloned()).collect()
}

/// `p_c(x) − p_c(x \ r)`.
pub fn comprehensiveness(clf: &dyn TextClassifier, doc: &Document, r: &Rationale, c: usize) -> Result<f64> {
    let full = clf.predict_proba(&doc.tokens)?[c];
    if r.is_empty() {
        return Ok(0.0);
    }
    Ok(full - clf.predict_proba(&without_positions(&doc.tokens, &r.positions))?[c])
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SufficiencyForm {
    /// `p_c(x) − p_c(r)`.
    #[default]
    Difference,
    /// `p_c(x) · p_c(r)`, kept for comparison with the printed product form.
    Product,
}

pub fn sufficiency(
    clf: &dyn TextClassifier,
    doc: &Document,
    r: &Rationale,
    c: usize,
    form: SufficiencyForm,
) -> Result<f64> {
    let full = clf.predict_proba(&doc.tokens)?[c];
    let kept = if r.len() == doc.tokens.len() {
        full
    } else {
        clf.predict_proba(&only_positions(&doc.tokens, &r.positions))?[c]
    };
    Ok(match form {
        SufficiencyForm::Difference => full - kept,
        SufficiencyForm::Product => full * kept,
    })
}

/// `|predicted ∩ gold| / |gold| ≥ 0.5`; `None` for an empty gold set.
pub fn rationale_match(predicted: &Rationale, gold: &Rationale) -> Option<bool> {
    if gold.is_empty() {
        return None;
    }
    let overlap = predicted.positions.intersection(&gold.positions).count();
    Some(overlap as f64 / gold.len() as f64 >= MATCH_THRESHOLD)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocFaithfulness {
    pub id: String,
    pub e: f64,
    pub s: f64,
    #[serde(rename = "match")]
    pub matched: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaithfulnessReport {
    pub model: String,
    pub explainer: Method,
    pub p: f64,
    pub sufficiency_form: SufficiencyForm,
    pub per_doc: Vec<DocFaithfulness>,
    pub mean_e: f64,
    pub mean_s: f64,
    /// Share of matched documents among those with a non-empty gold
    /// rationale; `None` when there are none.
    pub match_rate: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaithfulnessConfig {
    pub method: Method,
    pub p: f64,
    pub lrp: LrpConfig,
    pub sufficiency_form: SufficiencyForm,
}

impl Default for FaithfulnessConfig {
    fn default() -> Self {
        FaithfulnessConfig {
            method: Method::Lrp,
            p: DEFAULT_FRACTION,
            lrp: LrpConfig::default(),
            sufficiency_form: SufficiencyForm::Difference,
        }
    }
}

/// Scores every non-empty document of `corpus` on the model's predicted
/// class with a rationale extracted by `config.method`.
pub fn faithfulness_report(
    clf: &Classifier,
    model_name: &str,
    corpus: &LabeledCorpus,
    config: &FaithfulnessConfig,
) -> Result<FaithfulnessReport> {
    check_fraction(config.p)?;
    let mut per_doc = Vec::new();
    for doc in corpus.documents.iter().filter(|d| !d.tokens.is_empty()) {
        let c = clf.predict(&doc.tokens)?;
        let rel = explain(clf, doc, c, config.method, &config.lrp)?;
        let r = extract_rationale(&rel, doc, config.p)?;
        per_doc.push(DocFaithfulness {
            id: doc.id.clone(),
            e: comprehensiveness(clf, doc, &r, c)?,
            s: sufficiency(clf, doc, &r, c, config.sufficiency_form)?,
            matched: Rationale::gold(doc).and_then(|g| rationale_match(&r, &g)),
        });
    }
    let n = per_doc.len().max(1) as f64;
    let mean_e = per_doc.iter().map(|d| d.e).sum::<f64>() / n;
    let mean_s = per_doc.iter().map(|d| d.s).sum::<f64>() / n;
    let judged: Vec<bool> = per_doc.iter().filter_map(|d| d.matched).collect();
    let match_rate = (!judged.is_empty())
        .then(|| judged.iter().filter(|&&m| m).count() as f64 / judged.len() as f64);
    Ok(FaithfulnessReport {
        model: model_name.to_string(),
        explainer: config.method,
        p: config.p,
        sufficiency_form: config.sufficiency_form,
        per_doc,
        mean_e,
        mean_s,
        match_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explain::TokenScore;
    use crate::rng::seeded;

    fn doc(n: usize) -> Document {
        Document::from_tokens("d", (0..n).map(|i| format!("t{i}")).collect(), 0)
    }

    fn rel(scores: &[f64]) -> RelevanceMap {
        RelevanceMap {
            doc_id: "d".into(),
            class: 0,
            class_name: None,
            method: Method::Lrp,
            tokens: scores
                .iter()
                .enumerate()
                .map(|(pos, &score)| TokenScore {
                    pos,
                    token: format!("t{pos}"),
                    score,
                })
                .collect(),
            total: 0.0,
        }
    }

    /// Probability of class 0 is the share of tokens named `t0`.
    struct Counter;

    impl TextClassifier for Counter {
        fn num_classes(&self) -> usize {
            2
        }

        fn predict_proba(&self, tokens: &[String]) -> Result<Vec<f64>> {
            if tokens.is_empty() {
                return Ok(vec![0.5, 0.5]);
            }
            let p = tokens.iter().filter(|t| *t == "t0").count() as f64 / tokens.len() as f64;
            Ok(vec![p, 1.0 - p])
        }
    }

    #[test]
    fn size_uses_ceiling_without_float_noise() {
        assert_eq!(rationale_size(0.3, 10), 3);
        assert_eq!(rationale_size(0.2, 22), 5);
        assert_eq!(rationale_size(1.0, 7), 7);
        assert_eq!(rationale_size(0.01, 7), 1);
    }

    #[test]
    fn extraction_rules() {
        let d = doc(10);
        let all = extract_rationale(&rel(&[0.1; 10]), &d, 1.0).unwrap();
        assert_eq!(all.len(), 10);
        let three = extract_rationale(&rel(&[0.0, 5.0, 1.0, -3.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]), &d, 0.3).unwrap();
        // |−3| ranks second; the tie between positions 2 and 7 keeps 2
        assert_eq!(three.positions, BTreeSet::from([1, 2, 3]));
        assert!((three.fraction - 0.3).abs() < 1e-15);
        assert!(extract_rationale(&rel(&[0.0; 10]), &d, 0.0).is_err());
    }

    #[test]
    fn match_threshold_is_inclusive() {
        let d = doc(10);
        let r = |p: &[usize]| Rationale::new(&d, p.iter().copied().collect(), RationaleSource::Gold).unwrap();
        let gold = r(&[0, 1, 2, 3]);
        assert_eq!(rationale_match(&r(&[0, 1, 2, 3, 4]), &gold), Some(true));
        assert_eq!(rationale_match(&r(&[0, 1, 8]), &gold), Some(true));
        assert_eq!(rationale_match(&r(&[0, 8, 9]), &gold), Some(false));
        assert_eq!(rationale_match(&gold, &r(&[])), None);
    }

    #[test]
    fn identities_and_arithmetic() {
        let d = Document::from_tokens("d", vec!["t0".into(), "t0".into(), "x".into(), "y".into()], 0);
        let whole = Rationale::new(&d, (0..4).collect(), RationaleSource::Extracted).unwrap();
        let empty = Rationale::new(&d, BTreeSet::new(), RationaleSource::Extracted).unwrap();
        assert_eq!(sufficiency(&Counter, &d, &whole, 0, SufficiencyForm::Difference).unwrap(), 0.0);
        assert_eq!(comprehensiveness(&Counter, &d, &empty, 0).unwrap(), 0.0);
        let first = Rationale::new(&d, BTreeSet::from([0, 1]), RationaleSource::Extracted).unwrap();
        // p(x) = 0.5, p(x \ r) = 0, p(r) = 1
        assert_eq!(comprehensiveness(&Counter, &d, &first, 0).unwrap(), 0.5);
        assert_eq!(sufficiency(&Counter, &d, &first, 0, SufficiencyForm::Difference).unwrap(), -0.5);
        assert_eq!(sufficiency(&Counter, &d, &first, 0, SufficiencyForm::Product).unwrap(), 0.5);
    }

    #[test]
    fn contrast_keeps_token_order() {
        let toks: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
        assert_eq!(without_positions(&toks, &BTreeSet::from([1])), vec!["a", "c", "d"]);
        assert_eq!(only_positions(&toks, &BTreeSet::from([3, 0])), vec!["a", "d"]);
    }

    #[test]
    fn random_rationales_have_requested_size() {
        let mut rng = seeded(4);
        let r = random_rationale(&doc(10), 3, &mut rng);
        assert_eq!(r.len(), 3);
        assert_eq!(r.source, RationaleSource::Random);
    }
}
