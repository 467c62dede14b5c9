//! Multi-annotator agreement and gold-label aggregation.
//!
//! For `n` subjects each labelled by `m` annotators into one of `k`
//! categories, `x[i][j]` counts the annotators who put subject `i` into
//! category `j`. The category proportion is
//!
//! ```text
//! p_j = Σ_i x_ij / (n·m)
//! ```
//!
//! the per-category kappa is
//!
//! ```text
//! κ_j = 1 − Σ_i x_ij (m − x_ij) / (n·m·(m − 1)·p_j·(1 − p_j))
//! ```
//!
//! and the overall kappa is the `p_j(1 − p_j)`-weighted mean of the `κ_j`.
//! Categories with `p_j ∈ {0, 1}` have no defined kappa and are left out of
//! the weighted mean.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::hash::Hash;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationMatrix {
    counts: Vec<Vec<u32>>,
    raters: u32,
}

impl AnnotationMatrix {
    /// Checks that every row sums to `raters` and that `n ≥ 1`, `k ≥ 2`,
    /// `m ≥ 2`.
    pub fn new(counts: Vec<Vec<u32>>, raters: u32) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::Annotation("no subjects".into()));
        }
        if raters < 2 {
            return Err(Error::Annotation(format!("need at least 2 annotators, got {raters}")));
        }
        let k = counts[0].len();
        if k < 2 {
            return Err(Error::Annotation(format!("need at least 2 categories, got {k}")));
        }
        for (i, row) in counts.iter().enumerate() {
            if row.len() != k {
                return Err(Error::Annotation(format!(
                    "subject {i} has {} categories, expected {k}",
                    row.len()
                )));
            }
            let sum: u32 = row.iter().sum();
            if sum != raters {
                return Err(Error::Annotation(format!(
                    "subject {i} has {sum} votes, expected {raters}"
                )));
            }
        }
        Ok(AnnotationMatrix { counts, raters })
    }

    pub fn subjects(&self) -> usize {
        self.counts.len()
    }

    pub fn categories(&self) -> usize {
        self.counts[0].len()
    }

    pub fn raters(&self) -> u32 {
        self.raters
    }

    pub fn counts(&self) -> &[Vec<u32>] {
        &self.counts
    }

    fn column_total(&self, j: usize) -> u64 {
        self.counts.iter().map(|row| u64::from(row[j])).sum()
    }

    fn is_degenerate(&self, j: usize) -> bool {
        let total = self.column_total(j);
        total == 0 || total == self.subjects() as u64 * u64::from(self.raters)
    }

    /// Proportion of all votes that went to category `j`.
    pub fn category_proportion(&self, j: usize) -> f64 {
        let n = self.subjects() as f64;
        let m = f64::from(self.raters);
        self.column_total(j) as f64 / (n * m)
    }

    /// Kappa for category `j`, or `None` when the category is degenerate
    /// (`p_j` is 0 or 1).
    pub fn category_kappa(&self, j: usize) -> Option<f64> {
        if self.is_degenerate(j) {
            return None;
        }
        let n = self.subjects() as f64;
        let m = f64::from(self.raters);
        let p = self.category_proportion(j);
        let disagreement: f64 = self
            .counts
            .iter()
            .map(|row| {
                let x = f64::from(row[j]);
                x * (m - x)
            })
            .sum();
        Some(1.0 - disagreement / (n * m * (m - 1.0) * p * (1.0 - p)))
    }

    /// Weighted mean of the defined category kappas.
    pub fn overall_kappa(&self) -> Result<f64> {
        let mut num = 0.0;
        let mut den = 0.0;
        for j in 0..self.categories() {
            if let Some(kappa) = self.category_kappa(j) {
                let p = self.category_proportion(j);
                let w = p * (1.0 - p);
                num += w * kappa;
                den += w;
            }
        }
        if den == 0.0 {
            return Err(Error::UndefinedAgreement);
        }
        Ok(num / den)
    }

    pub fn report(&self) -> KappaReport {
        let k = self.categories();
        KappaReport {
            subjects: self.subjects(),
            raters: self.raters,
            p_bar: (0..k).map(|j| self.category_proportion(j)).collect(),
            kappa: (0..k).map(|j| self.category_kappa(j)).collect(),
            overall: self.overall_kappa().ok(),
        }
    }
}

/// Per-category proportions and kappas plus the pooled value. `None`
/// marks an undefined kappa.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaReport {
    pub subjects: usize,
    pub raters: u32,
    pub p_bar: Vec<f64>,
    pub kappa: Vec<Option<f64>>,
    pub overall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Majority<L> {
    Label(L),
    Undecided,
}

impl<L> Majority<L> {
    pub fn label(self) -> Option<L> {
        match self {
            Majority::Label(l) => Some(l),
            Majority::Undecided => None,
        }
    }
}

/// The label chosen by more than half of the votes, if any.
pub fn majority_label<L: Eq + Hash + Clone>(votes: &[L]) -> Majority<L> {
    let mut counts: HashMap<&L, usize> = HashMap::new();
    for v in votes {
        *counts.entry(v).or_default() += 1;
    }
    counts
        .into_iter()
        .find(|&(_, c)| 2 * c > votes.len())
        .map_or(Majority::Undecided, |(l, _)| Majority::Label(l.clone()))
}

/// Annotations pivoted per subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotations {
    pub subject_ids: Vec<String>,
    pub categories: Vec<String>,
    /// Category index voted by each annotator, per subject, in file order.
    pub votes: Vec<Vec<usize>>,
    pub matrix: AnnotationMatrix,
}

impl Annotations {
    /// Majority category name per subject (`None` when undecided).
    pub fn gold_labels(&self) -> Vec<(String, Option<String>)> {
        self.subject_ids
            .iter()
            .zip(&self.votes)
            .map(|(id, votes)| {
                let label = majority_label(votes)
                    .label()
                    .map(|j| self.categories[j].clone());
                (id.clone(), label)
            })
            .collect()
    }
}

/// Reads `id,annotator,label` rows. Subjects must all have the same number
/// of votes (`raters`, or that of the first subject when `None`).
pub fn read_annotations(reader: impl Read, raters: Option<u32>) -> Result<Annotations> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Schema(format!("missing column {name:?}")))
    };
    let (id_col, annotator_col, label_col) = (col("id")?, col("annotator")?, col("label")?);

    let mut order: Vec<String> = Vec::new();
    let mut by_subject: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut seen: BTreeSet<(String, String)> = BTreeSet::new();
    for record in rdr.records() {
        let record = record?;
        let id = record.get(id_col).unwrap_or("").trim().to_string();
        let annotator = record.get(annotator_col).unwrap_or("").trim().to_string();
        let label = record.get(label_col).unwrap_or("").trim().to_string();
        if !seen.insert((id.clone(), annotator.clone())) {
            return Err(Error::Annotation(format!(
                "annotator {annotator} labelled subject {id} twice"
            )));
        }
        if !by_subject.contains_key(&id) {
            order.push(id.clone());
        }
        by_subject.entry(id).or_default().push(label);
    }
    if order.is_empty() {
        return Err(Error::NoDocuments);
    }
    let categories: Vec<String> = by_subject
        .values()
        .flatten()
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let index: HashMap<&str, usize> = categories
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    let m = raters.unwrap_or(by_subject[&order[0]].len() as u32);
    let mut votes = Vec::with_capacity(order.len());
    let mut counts = Vec::with_capacity(order.len());
    for id in &order {
        let labels = &by_subject[id];
        if labels.len() != m as usize {
            return Err(Error::Annotation(format!(
                "subject {id} has {} votes, expected {m}",
                labels.len()
            )));
        }
        let v: Vec<usize> = labels.iter().map(|l| index[l.as_str()]).collect();
        let mut row = vec![0u32; categories.len().max(2)];
        for &j in &v {
            row[j] += 1;
        }
        votes.push(v);
        counts.push(row);
    }
    let mut categories = categories;
    if categories.len() < 2 {
        // A single observed category still forms a valid (degenerate) matrix.
        categories.push("<other>".into());
    }
    let matrix = AnnotationMatrix::new(counts, m)?;
    Ok(Annotations {
        subject_ids: order,
        categories,
        votes,
        matrix,
    })
}

pub fn load_annotations(path: impl AsRef<Path>, raters: Option<u32>) -> Result<Annotations> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_annotations(file, raters)
}
