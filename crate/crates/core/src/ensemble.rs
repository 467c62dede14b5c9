//! Majority-vote and cross-validation-weighted ensembles, plus candidate
//! selection by validation F1 and log-norm.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{stratified_folds, LabeledCorpus};
use crate::error::{Error, Result};
use crate::metrics::{class_report, mcc, ConfusionMatrix};
use crate::network::{argmax, TrainHistory};
use crate::features::EmbeddingTable;
use crate::pipeline::{fit_classifier_with, Classifier, ClassifierConfig, TextClassifier};
use crate::rng::derive_seed;

fn check_members(distributions: &[Vec<f64>]) -> Result<usize> {
    let k = distributions
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::Parameter("no member distributions".into()))?;
    if distributions.iter().any(|d| d.len() != k) {
        return Err(Error::Parameter("member distributions differ in class count".into()));
    }
    Ok(k)
}

/// Label with the most member argmax votes. Ties go to the highest mean
/// probability among the tied labels, then to the lowest index.
pub fn majority_vote(distributions: &[Vec<f64>]) -> Result<usize> {
    let k = check_members(distributions)?;
    let mut votes = vec![0usize; k];
    let mut mean = vec![0.0; k];
    for d in distributions {
        votes[argmax(d)] += 1;
        for (m, p) in mean.iter_mut().zip(d) {
            *m += p;
        }
    }
    let top = *votes.iter().max().expect("k ≥ 1");
    let mut best: Option<usize> = None;
    for c in (0..k).filter(|&c| votes[c] == top) {
        match best {
            Some(b) if mean[c] <= mean[b] => {}
            _ => best = Some(c),
        }
    }
    Ok(best.expect("some label has the top vote count"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub id: String,
    pub macro_f1: f64,
    pub mcc: f64,
    pub log_norm: f64,
}

/// The `k` best candidates by macro-F1 (descending), ties by lower log-norm,
/// then by id.
pub fn select_top_k(candidates: &[CandidateScore], k: usize) -> Result<Vec<CandidateScore>> {
    if k == 0 {
        return Err(Error::Parameter("k must be at least 1".into()));
    }
    if k > candidates.len() {
        return Err(Error::Parameter(format!(
            "cannot select {k} of {} candidates",
            candidates.len()
        )));
    }
    let mut ranked = candidates.to_vec();
    ranked.sort_by(|a, b| {
        b.macro_f1
            .total_cmp(&a.macro_f1)
            .then(a.log_norm.total_cmp(&b.log_norm))
            .then_with(|| a.id.cmp(&b.id))
    });
    ranked.truncate(k);
    Ok(ranked)
}

/// `α_m = F1_m / Σ F1`; uniform when every score is zero.
pub fn weights_from_scores(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::Parameter("no scores".into()));
    }
    if scores.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
        return Err(Error::Parameter("scores must be finite and non-negative".into()));
    }
    let total: f64 = scores.iter().sum();
    if total == 0.0 {
        return Ok(vec![1.0 / scores.len() as f64; scores.len()]);
    }
    Ok(scores.iter().map(|s| s / total).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombineRule {
    HardMajority,
    WeightedSoft,
}

/// Weighted-soft combination `Σ_m α_m p_m`, renormalized.
pub fn combine_soft(distributions: &[Vec<f64>], weights: &[f64]) -> Result<Vec<f64>> {
    let k = check_members(distributions)?;
    if weights.len() != distributions.len() {
        return Err(Error::Parameter("one weight per member is required".into()));
    }
    let mut out = vec![0.0; k];
    for (d, a) in distributions.iter().zip(weights) {
        for (o, p) in out.iter_mut().zip(d) {
            *o += a * p;
        }
    }
    let total: f64 = out.iter().sum();
    if total > 0.0 {
        for o in &mut out {
            *o /= total;
        }
    }
    Ok(out)
}

/// Share of member argmax votes per class.
pub fn vote_shares(distributions: &[Vec<f64>]) -> Result<Vec<f64>> {
    let k = check_members(distributions)?;
    let mut shares = vec![0.0; k];
    for d in distributions {
        shares[argmax(d)] += 1.0;
    }
    let m = distributions.len() as f64;
    Ok(shares.into_iter().map(|s| s / m).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub members: Vec<Classifier>,
    /// Non-negative and summing to 1.
    pub weights: Vec<f64>,
    pub rule: CombineRule,
}

impl EnsembleModel {
    pub fn new(members: Vec<Classifier>, weights: Vec<f64>, rule: CombineRule) -> Result<Self> {
        if members.len() < 2 {
            return Err(Error::Parameter("an ensemble needs at least 2 members".into()));
        }
        if weights.len() != members.len() {
            return Err(Error::Parameter("one weight per member is required".into()));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Parameter("weights must be finite and non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::Parameter("weights must not all be zero".into()));
        }
        let k = members[0].num_classes();
        if members.iter().any(|m| m.num_classes() != k) {
            return Err(Error::Parameter("members differ in class count".into()));
        }
        Ok(EnsembleModel {
            members,
            weights: weights.iter().map(|w| w / total).collect(),
            rule,
        })
    }

    pub fn uniform(members: Vec<Classifier>, rule: CombineRule) -> Result<Self> {
        let n = members.len();
        Self::new(members, vec![1.0; n], rule)
    }

    pub fn member_distributions(&self, tokens: &[String]) -> Result<Vec<Vec<f64>>> {
        self.members.iter().map(|m| m.predict_proba(tokens)).collect()
    }

    /// Combined distribution and label. Hard majority reports vote shares
    /// and the [`majority_vote`] label.
    pub fn predict_with_label(&self, tokens: &[String]) -> Result<(Vec<f64>, usize)> {
        let dists = self.member_distributions(tokens)?;
        match self.rule {
            CombineRule::WeightedSoft => {
                let p = combine_soft(&dists, &self.weights)?;
                let label = argmax(&p);
                Ok((p, label))
            }
            CombineRule::HardMajority => Ok((vote_shares(&dists)?, majority_vote(&dists)?)),
        }
    }
}

impl TextClassifier for EnsembleModel {
    fn num_classes(&self) -> usize {
        self.members[0].num_classes()
    }

    fn predict_proba(&self, tokens: &[String]) -> Result<Vec<f64>> {
        Ok(self.predict_with_label(tokens)?.0)
    }

    fn predict(&self, tokens: &[String]) -> Result<usize> {
        Ok(self.predict_with_label(tokens)?.1)
    }
}

/// Validation scores of one classifier.
pub fn score_candidate(id: &str, clf: &Classifier, validation: &LabeledCorpus) -> Result<CandidateScore> {
    let predicted = validation
        .documents
        .iter()
        .map(|d| clf.predict(&d.tokens))
        .collect::<Result<Vec<_>>>()?;
    let cm = ConfusionMatrix::from_labels(&validation.labels(), &predicted, validation.num_classes())?;
    Ok(CandidateScore {
        id: id.to_string(),
        macro_f1: class_report(&cm).macro_f1,
        mcc: mcc(&cm).value,
        log_norm: clf.model().map_or(f64::NAN, |m| m.log_norm()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub train_size: usize,
    pub held_out: Vec<usize>,
    pub score: CandidateScore,
    pub history: TrainHistory,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvEnsemble {
    pub model: EnsembleModel,
    pub folds: Vec<FoldReport>,
}

/// Trains one model per fold on the other `folds − 1` folds, scores it on
/// its held-out fold and weights members by held-out macro-F1. Fold `m`
/// derives its initialization and training seeds from `seed` and `m`.
pub fn cv_train(corpus: &LabeledCorpus, folds: usize, config: &ClassifierConfig, seed: u64) -> Result<CvEnsemble> {
    cv_train_with(corpus, folds, config, seed, None)
}

/// [`cv_train`] with pretrained vectors for every fold model's embedding
/// layer.
pub fn cv_train_with(
    corpus: &LabeledCorpus,
    folds: usize,
    config: &ClassifierConfig,
    seed: u64,
    embeddings: Option<&EmbeddingTable>,
) -> Result<CvEnsemble> {
    if folds < 2 {
        return Err(Error::Parameter("cross-validation needs at least 2 folds".into()));
    }
    let assignment = stratified_folds(corpus, folds, seed)?;
    let mut members = Vec::with_capacity(folds);
    let mut reports = Vec::with_capacity(folds);
    for (m, held_out) in assignment.iter().enumerate() {
        let train_idx: Vec<usize> = assignment
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != m)
            .flat_map(|(_, f)| f.iter().copied())
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        let train = corpus.subset(&train_idx, format!("{} fold {m} train", corpus.provenance));
        let valid = corpus.subset(held_out, format!("{} fold {m} held-out", corpus.provenance));
        let mut cfg = config.clone();
        cfg.init_seed = derive_seed(config.init_seed ^ seed, 2 * m as u64);
        cfg.train.seed = derive_seed(config.train.seed ^ seed, 2 * m as u64 + 1);
        let wrap = |e: Error| Error::Fold {
            fold: m,
            source: Box::new(e),
        };
        let (clf, history) = fit_classifier_with(&train, &cfg, embeddings).map_err(wrap)?;
        let score = score_candidate(&format!("fold{m}"), &clf, &valid).map_err(wrap)?;
        reports.push(FoldReport {
            fold: m,
            train_size: train.len(),
            held_out: held_out.clone(),
            score,
            history,
        });
        members.push(clf);
    }
    let f1: Vec<f64> = reports.iter().map(|r| r.score.macro_f1).collect();
    let weights = weights_from_scores(&f1)?;
    Ok(CvEnsemble {
        model: EnsembleModel::new(members, weights, CombineRule::WeightedSoft)?,
        folds: reports,
    })
}

/// Every weight vector on the simplex grid with spacing `1/steps`, in
/// lexicographic order.
pub fn simplex_grid(members: usize, steps: usize) -> Vec<Vec<f64>> {
    fn rec(left: usize, slots: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if slots == 1 {
            prefix.push(left);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for v in 0..=left {
            prefix.push(v);
            rec(left - v, slots - 1, prefix, out);
            prefix.pop();
        }
    }
    if members == 0 || steps == 0 {
        return Vec::new();
    }
    let mut raw = Vec::new();
    rec(steps, members, &mut Vec::new(), &mut raw);
    raw.into_iter()
        .map(|v| v.into_iter().map(|x| x as f64 / steps as f64).collect())
        .collect()
}

/// Exhaustive search over [`simplex_grid`] for the weights maximizing the
/// weighted-soft macro-F1 on `validation` (first maximum wins).
pub fn grid_search_weights(ensemble: &EnsembleModel, validation: &LabeledCorpus, steps: usize) -> Result<(Vec<f64>, f64)> {
    if steps == 0 {
        return Err(Error::Parameter("grid steps must be at least 1".into()));
    }
    let dists: Vec<Vec<Vec<f64>>> = validation
        .documents
        .iter()
        .map(|d| ensemble.member_distributions(&d.tokens))
        .collect::<Result<_>>()?;
    let labels = validation.labels();
    let k = validation.num_classes();
    let mut best: Option<(Vec<f64>, f64)> = None;
    for w in simplex_grid(ensemble.members.len(), steps) {
        let predicted = dists
            .iter()
            .map(|d| combine_soft(d, &w).map(|p| argmax(&p)))
            .collect::<Result<Vec<_>>>()?;
        let f1 = class_report(&ConfusionMatrix::from_labels(&labels, &predicted, k)?).macro_f1;
        if best.as_ref().is_none_or(|(_, b)| f1 > *b) {
            best = Some((w, f1));
        }
    }
    Ok(best.expect("grid is non-empty"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestMember {
    pub checkpoint: PathBuf,
    pub weight: f64,
    pub validation: Option<CandidateScore>,
}

/// On-disk description of an ensemble: member checkpoints, weights, rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleManifest {
    pub rule: CombineRule,
    pub members: Vec<ManifestMember>,
}

impl EnsembleManifest {
    /// Writes every member next to `path` as `member{m}.json` and the
    /// manifest itself to `path`. Checkpoint paths are stored relative to
    /// the manifest directory.
    pub fn save(ensemble: &EnsembleModel, scores: &[Option<CandidateScore>], path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let dir = path.parent().unwrap_or(Path::new("."));
        let mut members = Vec::with_capacity(ensemble.members.len());
        for (m, (clf, w)) in ensemble.members.iter().zip(&ensemble.weights).enumerate() {
            let name = PathBuf::from(format!("member{m}.json"));
            clf.save(dir.join(&name))?;
            members.push(ManifestMember {
                checkpoint: name,
                weight: *w,
                validation: scores.get(m).cloned().flatten(),
            });
        }
        let manifest = EnsembleManifest {
            rule: ensemble.rule,
            members,
        };
        let text = serde_json::to_string_pretty(&manifest)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
        Ok(manifest)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<EnsembleModel> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: EnsembleManifest = serde_json::from_str(&text)?;
        let dir = path.parent().unwrap_or(Path::new("."));
        let members = manifest
            .members
            .iter()
            .map(|m| Classifier::load(dir.join(&m.checkpoint)))
            .collect::<Result<Vec<_>>>()?;
        let weights = manifest.members.iter().map(|m| m.weight).collect();
        EnsembleModel::new(members, weights, manifest.rule)
    }
}
