//! Turning option log-scores into label distributions.

use alloc::collections::BTreeMap;
use alloc::string::String;

use serde::{Deserialize, Serialize};

use crate::prompt::TaskSpec;

/// Tolerance for "sums to one".
pub const PROB_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScoringError {
    #[error("score for {0:?} is not finite")]
    NonFinite(String),
    #[error("no scores to normalize")]
    Empty,
    #[error("backend returned no score for option {0:?}")]
    MissingOption(String),
}

/// Softmax with max-subtraction, so large scores cannot overflow.
pub fn normalize_option_scores(raw: &BTreeMap<String, f64>) -> Result<BTreeMap<String, f64>, ScoringError> {
    if let Some((k, _)) = raw.iter().find(|(_, v)| !v.is_finite()) {
        return Err(ScoringError::NonFinite(k.clone()));
    }
    let max = raw.values().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(ScoringError::Empty);
    }
    let weights: BTreeMap<&String, f64> = raw.iter().map(|(k, v)| (k, libm::exp(v - max))).collect();
    let total: f64 = weights.values().sum();
    Ok(weights.into_iter().map(|(k, w)| (k.clone(), w / total)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub example_id: String,
    pub model_id: String,
    pub probs: BTreeMap<String, f64>,
}

impl Prediction {
    /// Maps option log-scores back to labels and normalizes them.
    pub fn from_option_scores(
        spec: &TaskSpec,
        example_id: impl Into<String>,
        model_id: impl Into<String>,
        option_scores: &BTreeMap<String, f64>,
    ) -> Result<Self, ScoringError> {
        let mut by_label = BTreeMap::new();
        for (label, option) in spec.label_set.iter().zip(spec.options()) {
            let score = *option_scores.get(&option).ok_or(ScoringError::MissingOption(option))?;
            by_label.insert(label.clone(), score);
        }
        Ok(Prediction {
            example_id: example_id.into(),
            model_id: model_id.into(),
            probs: normalize_option_scores(&by_label)?,
        })
    }

    /// Highest-probability label; ties go to the lexicographically
    /// smallest label.
    pub fn argmax(&self) -> Option<&str> {
        // BTreeMap iterates in ascending key order, so a strict `>` keeps
        // the smallest label among equals.
        let mut best: Option<(&String, f64)> = None;
        for (label, &p) in &self.probs {
            if best.is_none_or(|(_, bp)| p > bp) {
                best = Some((label, p));
            }
        }
        best.map(|(l, _)| l.as_str())
    }

    /// Probabilities are finite, in [0, 1], sum to one and cover `labels`.
    pub fn is_valid_for(&self, labels: &[String]) -> bool {
        let in_range = self.probs.values().all(|p| p.is_finite() && (0.0..=1.0).contains(p));
        let sum: f64 = self.probs.values().sum();
        in_range
            && (sum - 1.0).abs() <= PROB_SUM_TOLERANCE
            && labels.iter().all(|l| self.probs.contains_key(l))
    }
}
