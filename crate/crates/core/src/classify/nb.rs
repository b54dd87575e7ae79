//! Multinomial Naive Bayes with additive smoothing.

use serde::{Deserialize, Serialize};

use super::{check_shapes, Classification, ClassifyError};
use crate::classify::CountVector;
use crate::hierarchy::ClassCode;

pub const DEFAULT_ALPHA: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NbModel {
    classes: Vec<ClassCode>,
    log_priors: Vec<f64>,
    /// `log_likelihoods[class][feature]`
    log_likelihoods: Vec<Vec<f64>>,
    alpha: f64,
}

impl NbModel {
    pub fn classes(&self) -> &[ClassCode] {
        &self.classes
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn n_features(&self) -> usize {
        self.log_likelihoods.first().map_or(0, Vec::len)
    }

    pub fn log_prior(&self, class: usize) -> f64 {
        self.log_priors[class]
    }

    pub fn log_likelihood(&self, class: usize, feature: u32) -> f64 {
        self.log_likelihoods[class][feature as usize]
    }

    /// Unnormalized log posterior of every class.
    pub fn joint_log_likelihood(&self, x: &CountVector) -> Vec<f64> {
        self.log_priors
            .iter()
            .zip(&self.log_likelihoods)
            .map(|(prior, lik)| {
                prior
                    + x.entries()
                        .iter()
                        .filter(|(f, _)| (*f as usize) < lik.len())
                        .map(|(f, c)| *c as f64 * lik[*f as usize])
                        .sum::<f64>()
            })
            .collect()
    }

    /// Normalized posterior distribution over [`Self::classes`].
    pub fn posteriors(&self, x: &CountVector) -> Vec<f64> {
        let jll = self.joint_log_likelihood(x);
        let max = jll.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = jll.iter().map(|s| (s - max).exp()).collect();
        let z: f64 = exp.iter().sum();
        exp.into_iter().map(|e| e / z).collect()
    }

    pub fn predict(&self, x: &CountVector) -> Classification {
        let jll = self.joint_log_likelihood(x);
        let top = jll.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        // scores equal up to rounding are ties; classes are sorted, so the
        // first one breaks them lexicographically
        let best = jll
            .iter()
            .position(|s| top - s <= TIE_TOLERANCE * top.abs().max(1.0))
            .expect("model has classes");
        let z: f64 = jll.iter().map(|s| (s - jll[best]).exp()).sum();
        Classification {
            code: self.classes[best],
            confidence: (1.0 / z).clamp(0.0, 1.0),
        }
    }
}

/// Relative gap below which two joint log-likelihoods count as tied.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// Fits class priors `n_c / n` and smoothed token likelihoods
/// `(count(t, c) + alpha) / (total(c) + alpha * n_features)`.
pub fn train_nb(
    x: &[CountVector],
    y: &[ClassCode],
    alpha: f64,
    n_features: usize,
) -> Result<NbModel, ClassifyError> {
    check_shapes(x, y)?;
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(ClassifyError::InvalidParameter(format!("alpha must be positive, got {alpha}")));
    }
    let mut classes: Vec<ClassCode> = y.to_vec();
    classes.sort_unstable();
    classes.dedup();

    let mut doc_counts = vec![0u64; classes.len()];
    let mut token_counts = vec![vec![0u64; n_features]; classes.len()];
    for (xi, yi) in x.iter().zip(y) {
        let c = classes.binary_search(yi).expect("class collected above");
        doc_counts[c] += 1;
        for &(f, n) in xi.entries() {
            let f = f as usize;
            if f >= n_features {
                return Err(ClassifyError::InvalidParameter(format!(
                    "feature index {f} out of range for {n_features} features"
                )));
            }
            token_counts[c][f] += n as u64;
        }
    }

    let n = x.len() as f64;
    let log_priors = doc_counts.iter().map(|&d| (d as f64 / n).ln()).collect();
    let log_likelihoods = token_counts
        .iter()
        .map(|row| {
            let total: u64 = row.iter().sum();
            let denom = (total as f64 + alpha * n_features as f64).ln();
            row.iter().map(|&c| (c as f64 + alpha).ln() - denom).collect()
        })
        .collect();
    Ok(NbModel {
        classes,
        log_priors,
        log_likelihoods,
        alpha,
    })
}

pub fn predict_nb(m: &NbModel, x: &CountVector) -> Classification {
    m.predict(x)
}
