//! Multinomial naive Bayes over non-negative feature vectors.

use serde::{Deserialize, Serialize};

use super::layers::softmax;
use crate::error::{Error, Result};
use crate::features::SparseVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaiveBayes {
    pub alpha: f64,
    pub log_prior: Vec<f64>,
    /// `K × dim` smoothed log feature likelihoods.
    pub log_likelihood: Vec<Vec<f64>>,
}

impl NaiveBayes {
    /// Fits with add-`alpha` smoothing:
    /// `θ_ck = (N_ck + α) / (Σ_k N_ck + α·dim)`, priors from class counts.
    pub fn fit(features: &[SparseVector], labels: &[usize], num_classes: usize, alpha: f64) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(Error::Parameter(format!(
                "{} feature vectors but {} labels",
                features.len(),
                labels.len()
            )));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::Parameter(format!("smoothing {alpha} must be positive")));
        }
        let dim = features.first().map(|f| f.dim).ok_or(Error::NoDocuments)?;
        let mut counts = vec![vec![0.0; dim]; num_classes];
        let mut docs = vec![0usize; num_classes];
        for (f, &y) in features.iter().zip(labels) {
            if f.dim != dim {
                return Err(Error::Parameter("feature vectors differ in dimension".into()));
            }
            if y >= num_classes {
                return Err(Error::Parameter(format!("label {y} outside {num_classes} classes")));
            }
            docs[y] += 1;
            for &(k, v) in &f.entries {
                if v < 0.0 || !v.is_finite() {
                    return Err(Error::Parameter(format!("feature value {v} must be non-negative")));
                }
                counts[y][k] += v;
            }
        }
        if let Some(c) = docs.iter().position(|&n| n == 0) {
            return Err(Error::Prior(c));
        }
        let n = features.len() as f64;
        let log_prior = docs.iter().map(|&d| (d as f64 / n).ln()).collect();
        let log_likelihood = counts
            .into_iter()
            .map(|row| {
                let total: f64 = row.iter().sum::<f64>() + alpha * dim as f64;
                row.into_iter().map(|c| ((c + alpha) / total).ln()).collect()
            })
            .collect();
        Ok(NaiveBayes {
            alpha,
            log_prior,
            log_likelihood,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.log_prior.len()
    }

    /// Joint log-likelihoods `log P(c) + Σ_k x_k log θ_ck`.
    pub fn joint_log_likelihood(&self, x: &SparseVector) -> Vec<f64> {
        self.log_prior
            .iter()
            .zip(&self.log_likelihood)
            .map(|(prior, theta)| prior + x.entries.iter().map(|&(k, v)| v * theta[k]).sum::<f64>())
            .collect()
    }

    pub fn predict_proba(&self, x: &SparseVector) -> Vec<f64> {
        softmax(&self.joint_log_likelihood(x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sv(dim: usize, entries: &[(usize, f64)]) -> SparseVector {
        SparseVector {
            dim,
            entries: entries.to_vec(),
        }
    }

    #[test]
    fn separable_single_feature() {
        let xs = vec![sv(2, &[(0, 1.0)]), sv(2, &[(1, 1.0)])];
        let nb = NaiveBayes::fit(&xs, &[0, 1], 2, 1.0).unwrap();
        let p = nb.predict_proba(&sv(2, &[(1, 1.0)]));
        assert!(p[1] > p[0]);
    }

    #[test]
    fn symmetric_data_gives_uniform_posterior() {
        let xs = vec![sv(2, &[(0, 1.0), (1, 1.0)]), sv(2, &[(0, 1.0), (1, 1.0)])];
        let nb = NaiveBayes::fit(&xs, &[0, 1], 2, 1.0).unwrap();
        let p = nb.predict_proba(&sv(2, &[(0, 2.0)]));
        assert!((p[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn missing_class_is_a_prior_error() {
        let xs = vec![sv(2, &[(0, 1.0)])];
        assert!(matches!(NaiveBayes::fit(&xs, &[0], 3, 1.0), Err(Error::Prior(1))));
    }

    #[test]
    fn negative_values_are_rejected() {
        let xs = vec![sv(2, &[(0, -1.0)]), sv(2, &[(1, 1.0)])];
        assert!(NaiveBayes::fit(&xs, &[0, 1], 2, 1.0).is_err());
    }
}
