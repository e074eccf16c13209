//! Accuracy aggregation over expanded template cases.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::scoring::Prediction;
use crate::template::ExpandedCase;

/// Share of failed cases above which a verification run is aborted.
pub const MAX_CASE_FAILURE_RATE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub case_index: u64,
    pub predicted_label: String,
    pub correct: bool,
    pub probs: BTreeMap<String, f64>,
}

impl CaseResult {
    /// Correct iff the argmax label equals the gold label; no threshold.
    pub fn from_prediction(case: &ExpandedCase, prediction: Prediction) -> Self {
        let predicted_label = String::from(prediction.argmax().unwrap_or_default());
        CaseResult {
            case_index: case.case_index,
            correct: predicted_label == case.gold_label,
            predicted_label,
            probs: prediction.probs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseFailure {
    pub case_index: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateResult {
    #[serde(rename = "template")]
    pub template_name: String,
    pub model_id: String,
    pub test_type: String,
    pub gold_label: String,
    pub n_cases: usize,
    pub n_correct: usize,
    pub accuracy_pct: f64,
    #[serde(rename = "cases")]
    pub case_results: Vec<CaseResult>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<CaseFailure>,
}

/// 100 * correct / total; zero for an empty set.
pub fn accuracy_pct(n_correct: usize, n_cases: usize) -> f64 {
    if n_cases == 0 {
        0.0
    } else {
        100.0 * n_correct as f64 / n_cases as f64
    }
}

impl TemplateResult {
    /// Aggregates evaluated cases. `n_cases` counts only cases that were
    /// evaluated; failed ones are listed separately.
    pub fn from_cases(
        template_name: impl Into<String>,
        test_type: impl Into<String>,
        gold_label: impl Into<String>,
        model_id: impl Into<String>,
        mut case_results: Vec<CaseResult>,
        mut failures: Vec<CaseFailure>,
    ) -> Self {
        case_results.sort_by_key(|c| c.case_index);
        failures.sort_by_key(|f| f.case_index);
        let n_cases = case_results.len();
        let n_correct = case_results.iter().filter(|c| c.correct).count();
        TemplateResult {
            template_name: template_name.into(),
            model_id: model_id.into(),
            test_type: test_type.into(),
            gold_label: gold_label.into(),
            n_cases,
            n_correct,
            accuracy_pct: accuracy_pct(n_correct, n_cases),
            case_results,
            failures,
        }
    }

    pub fn failure_rate(&self) -> f64 {
        let total = self.n_cases + self.failures.len();
        if total == 0 {
            0.0
        } else {
            self.failures.len() as f64 / total as f64
        }
    }

    /// Checks the aggregate fields against `case_results`.
    pub fn is_consistent(&self) -> bool {
        self.n_cases == self.case_results.len()
            && self.n_correct == self.case_results.iter().filter(|c| c.correct).count()
            && self.n_correct <= self.n_cases
            && (self.accuracy_pct - accuracy_pct(self.n_correct, self.n_cases)).abs() < 1e-9
            && (0.0..=100.0).contains(&self.accuracy_pct)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotAccuracy {
    pub lexeme: String,
    pub n_cases: usize,
    pub accuracy_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("slot {0} is not bound in the evaluated template")]
pub struct UnknownSlot(pub String);

/// Accuracy grouped by the lexeme chosen for `slot`, best first (ties by
/// lexeme). Cases without a result (failed cases) are left out.
pub fn per_slot_accuracy(
    result: &TemplateResult,
    cases: &[ExpandedCase],
    slot: &str,
) -> Result<Vec<SlotAccuracy>, UnknownSlot> {
    if !cases.iter().any(|c| c.slot_values.contains_key(slot)) {
        return Err(UnknownSlot(slot.into()));
    }
    let by_index: BTreeMap<u64, &ExpandedCase> = cases.iter().map(|c| (c.case_index, c)).collect();
    let mut groups: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for r in &result.case_results {
        let Some(lexeme) = by_index.get(&r.case_index).and_then(|c| c.slot_values.get(slot)) else {
            continue;
        };
        let entry = groups.entry(lexeme).or_default();
        entry.0 += 1;
        entry.1 += usize::from(r.correct);
    }
    let mut out: Vec<SlotAccuracy> = groups
        .into_iter()
        .map(|(lexeme, (n, correct))| SlotAccuracy {
            lexeme: lexeme.into(),
            n_cases: n,
            accuracy_pct: accuracy_pct(correct, n),
        })
        .collect();
    out.sort_by(|a, b| b.accuracy_pct.total_cmp(&a.accuracy_pct).then_with(|| a.lexeme.cmp(&b.lexeme)));
    Ok(out)
}
