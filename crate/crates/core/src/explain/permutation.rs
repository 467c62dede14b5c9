//! Permutation feature importance over a column matrix.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::LabeledCorpus;
use crate::error::{Error, Result};
use crate::metrics::macro_f1;
use crate::network::{InputSpec, ModelGraph, ModelInput};
use crate::pipeline::{FeatureClassifier, SequenceClassifier};
use crate::rng::seeded;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationReport {
    /// Macro-F1 on the unshuffled rows.
    pub reference: f64,
    /// Evaluated columns, aligned with `importances`.
    pub columns: Vec<usize>,
    /// `s − (1/R)·Σ_r s_r` per column.
    pub importances: Vec<f64>,
    pub repetitions: usize,
    pub seed: u64,
}

/// Shuffles each listed column `repetitions` times and records the mean
/// macro-F1 drop. One random stream seeded with `seed` drives all shuffles,
/// column by column, repetition by repetition. The mean is taken over the
/// per-repetition drops `s − s_r`, so a column the model ignores scores
/// exactly 0.
pub fn permutation_importance<F>(
    predict: F,
    rows: &[Vec<f64>],
    labels: &[usize],
    num_classes: usize,
    columns: &[usize],
    repetitions: usize,
    seed: u64,
) -> Result<PermutationReport>
where
    F: Fn(&[Vec<f64>]) -> Result<Vec<usize>>,
{
    if repetitions == 0 {
        return Err(Error::Parameter("repetitions must be at least 1".into()));
    }
    if rows.len() < 2 {
        return Err(Error::Parameter("permutation importance needs at least 2 rows".into()));
    }
    if rows.len() != labels.len() {
        return Err(Error::Parameter(format!("{} rows but {} labels", rows.len(), labels.len())));
    }
    let width = rows[0].len();
    if let Some(&bad) = columns.iter().find(|&&j| j >= width) {
        return Err(Error::Parameter(format!("column {bad} outside {width} columns")));
    }
    let reference = macro_f1(labels, &predict(rows)?, num_classes)?;
    let mut rng = seeded(seed);
    let mut importances = Vec::with_capacity(columns.len());
    let mut shuffled = rows.to_vec();
    for &j in columns {
        let mut drop = 0.0;
        for _ in 0..repetitions {
            let mut perm: Vec<usize> = (0..rows.len()).collect();
            perm.shuffle(&mut rng);
            for (row, &src) in shuffled.iter_mut().zip(&perm) {
                row[j] = rows[src][j];
            }
            drop += reference - macro_f1(labels, &predict(&shuffled)?, num_classes)?;
        }
        for row in shuffled.iter_mut().zip(rows) {
            row.0[j] = row.1[j];
        }
        importances.push(drop / repetitions as f64);
    }
    Ok(PermutationReport {
        reference,
        columns: columns.to_vec(),
        importances,
        repetitions,
        seed,
    })
}

/// Dense TF-IDF rows of `corpus`.
pub fn model_rows(clf: &FeatureClassifier, corpus: &LabeledCorpus) -> Vec<Vec<f64>> {
    corpus
        .documents
        .iter()
        .map(|d| {
            let mut row = clf.tfidf.transform(d).to_dense();
            if let InputSpec::Features { dim } = clf.model.spec().input {
                row.resize(dim, 0.0);
            }
            row
        })
        .collect()
}

/// Token-id rows (as `f64`) of `corpus`, one column per sequence position.
pub fn token_rows(clf: &SequenceClassifier, corpus: &LabeledCorpus) -> Vec<Vec<f64>> {
    corpus
        .documents
        .iter()
        .map(|d| match clf.encode(&d.tokens) {
            ModelInput::Tokens(ids) => ids.into_iter().map(|i| i as f64).collect(),
            _ => unreachable!("sequence classifiers encode token ids"),
        })
        .collect()
}

/// Argmax predictions of `model` on column rows built by [`model_rows`] or
/// [`token_rows`].
pub fn predict_rows(model: &ModelGraph, rows: &[Vec<f64>]) -> Result<Vec<usize>> {
    rows.iter()
        .map(|row| {
            let input = match model.spec().input {
                InputSpec::Tokens { .. } => ModelInput::Tokens(row.iter().map(|&v| v as usize).collect()),
                InputSpec::Features { .. } => ModelInput::Dense(row.clone()),
            };
            Ok(model.predict(&input)?.argmax())
        })
        .collect()
}
