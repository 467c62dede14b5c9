//! Confusion matrices, per-class precision/recall/F1 and multiclass MCC.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `K×K` counts; rows are gold labels, columns are predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn from_labels(gold: &[usize], predicted: &[usize], num_classes: usize) -> Result<Self> {
        if gold.len() != predicted.len() {
            return Err(Error::Parameter(format!(
                "{} gold labels but {} predictions",
                gold.len(),
                predicted.len()
            )));
        }
        let mut counts = vec![vec![0u64; num_classes]; num_classes];
        for (&g, &p) in gold.iter().zip(predicted) {
            if g >= num_classes || p >= num_classes {
                return Err(Error::Parameter(format!(
                    "label pair ({g}, {p}) outside {num_classes} classes"
                )));
            }
            counts[g][p] += 1;
        }
        Ok(ConfusionMatrix { counts })
    }

    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = counts.len();
        if counts.iter().any(|r| r.len() != k) {
            return Err(Error::Parameter("confusion matrix must be square".into()));
        }
        Ok(ConfusionMatrix { counts })
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.num_classes()).map(|c| self.counts[c][c]).sum()
    }

    /// Gold count per class.
    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    /// Predicted count per class.
    pub fn col_sums(&self) -> Vec<u64> {
        (0..self.num_classes())
            .map(|c| self.counts.iter().map(|r| r[c]).sum())
            .collect()
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            0.0
        } else {
            self.correct() as f64 / total as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    /// Set when the class was never predicted (precision reported as 0).
    pub precision_undefined: bool,
    /// Set when the class never occurs in the gold labels (recall reported as 0).
    pub recall_undefined: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub per_class: Vec<ClassScores>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

pub fn class_report(cm: &ConfusionMatrix) -> ClassReport {
    let rows = cm.row_sums();
    let cols = cm.col_sums();
    let per_class: Vec<ClassScores> = (0..cm.num_classes())
        .map(|c| {
            let tp = cm.counts[c][c];
            let (precision, precision_undefined) = ratio(tp, cols[c]);
            let (recall, recall_undefined) = ratio(tp, rows[c]);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassScores {
                precision,
                recall,
                f1,
                support: rows[c],
                precision_undefined,
                recall_undefined,
            }
        })
        .collect();
    let k = per_class.len().max(1) as f64;
    let mean = |f: fn(&ClassScores) -> f64| per_class.iter().map(f).sum::<f64>() / k;
    ClassReport {
        macro_precision: mean(|s| s.precision),
        macro_recall: mean(|s| s.recall),
        macro_f1: mean(|s| s.f1),
        per_class,
    }
}

pub fn macro_f1(gold: &[usize], predicted: &[usize], num_classes: usize) -> Result<f64> {
    Ok(class_report(&ConfusionMatrix::from_labels(gold, predicted, num_classes)?).macro_f1)
}

/// Multiclass Matthews correlation coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mcc {
    pub value: f64,
    /// The denominator vanished (constant gold or constant prediction);
    /// `value` is then 0.
    pub degenerate: bool,
}

/// `(c·s − Σ p_k t_k) / sqrt((s² − Σ p_k²)(s² − Σ t_k²))` with `c` the
/// correct count, `s` the total, `p_k`/`t_k` the predicted/true counts.
pub fn mcc(cm: &ConfusionMatrix) -> Mcc {
    let s = cm.total() as f64;
    let c = cm.correct() as f64;
    let t: Vec<f64> = cm.row_sums().into_iter().map(|v| v as f64).collect();
    let p: Vec<f64> = cm.col_sums().into_iter().map(|v| v as f64).collect();
    let pt: f64 = p.iter().zip(&t).map(|(a, b)| a * b).sum();
    let pp: f64 = p.iter().map(|a| a * a).sum();
    let tt: f64 = t.iter().map(|a| a * a).sum();
    let den = ((s * s - pp) * (s * s - tt)).sqrt();
    if den == 0.0 || !den.is_finite() {
        return Mcc {
            value: 0.0,
            degenerate: true,
        };
    }
    Mcc {
        value: ((c * s - pt) / den).clamp(-1.0, 1.0),
        degenerate: false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetricsJson {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

/// Serializable evaluation summary: per-class scores, macro-F1, MCC and the
/// confusion matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_class: Vec<ClassMetricsJson>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
    pub mcc: f64,
    pub mcc_degenerate: bool,
    pub confusion: Vec<Vec<u64>>,
}

impl MetricsReport {
    pub fn new(cm: &ConfusionMatrix, class_names: &[String]) -> Self {
        let report = class_report(cm);
        let m = mcc(cm);
        MetricsReport {
            per_class: report
                .per_class
                .iter()
                .enumerate()
                .map(|(c, s)| ClassMetricsJson {
                    class: class_names
                        .get(c)
                        .cloned()
                        .unwrap_or_else(|| c.to_string()),
                    precision: s.precision,
                    recall: s.recall,
                    f1: s.f1,
                    support: s.support,
                })
                .collect(),
            macro_precision: report.macro_precision,
            macro_recall: report.macro_recall,
            macro_f1: report.macro_f1,
            accuracy: cm.accuracy(),
            mcc: m.value,
            mcc_degenerate: m.degenerate,
            confusion: cm.counts.clone(),
        }
    }

    pub fn from_labels(gold: &[usize], predicted: &[usize], class_names: &[String]) -> Result<Self> {
        let cm = ConfusionMatrix::from_labels(gold, predicted, class_names.len())?;
        Ok(Self::new(&cm, class_names))
    }
}
