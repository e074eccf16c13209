//! Disagreement between a task model and a reference model, and selection
//! of the most divergent examples.

use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::scoring::Prediction;

/// Default size of the hard subset.
pub const DEFAULT_TOP_K: usize = 10_000;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DivergenceError {
    #[error("example ids differ: {task:?} vs {reference:?}")]
    ExampleMismatch { task: String, reference: String },
    #[error("label sets differ for example {0:?}")]
    LabelMismatch(String),
    #[error("prediction for {0:?} has no labels")]
    EmptyPrediction(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceRecord {
    pub example_id: String,
    pub score: f64,
    pub argmax_label: String,
    pub rank: usize,
    pub task_model_id: String,
    pub ref_model_id: String,
}

/// A disagreement measure between two predictions of the same example.
/// Only binary tasks are supported; a multi-class measure (for example KL
/// divergence) would be another implementation.
pub trait DivergenceMetric {
    /// Returns the label the score refers to and the score itself.
    fn score(&self, task: &Prediction, reference: &Prediction) -> Result<(String, f64), DivergenceError>;
}

/// |p_task(y) - p_ref(y)| where y is the task model's most likely label.
#[derive(Debug, Clone, Copy, Default)]
pub struct TopLabelGap;

impl DivergenceMetric for TopLabelGap {
    fn score(&self, task: &Prediction, reference: &Prediction) -> Result<(String, f64), DivergenceError> {
        if task.example_id != reference.example_id {
            return Err(DivergenceError::ExampleMismatch {
                task: task.example_id.clone(),
                reference: reference.example_id.clone(),
            });
        }
        if !task.probs.keys().eq(reference.probs.keys()) {
            return Err(DivergenceError::LabelMismatch(task.example_id.clone()));
        }
        let label = task.argmax().ok_or_else(|| DivergenceError::EmptyPrediction(task.example_id.clone()))?;
        let gap = (task.probs[label] - reference.probs[label]).abs();
        Ok((label.into(), gap.clamp(0.0, 1.0)))
    }
}

pub fn divergence_score(task: &Prediction, reference: &Prediction) -> Result<(String, f64), DivergenceError> {
    TopLabelGap.score(task, reference)
}

/// Score descending, then example id ascending.
fn hardness_order(a: &DivergenceRecord, b: &DivergenceRecord) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.example_id.cmp(&b.example_id))
}

/// The `k` most divergent examples, ranked from 1.
pub fn rank_hard_subset(pairs: &[(Prediction, Prediction)], k: usize) -> Result<Vec<DivergenceRecord>, DivergenceError> {
    rank_with(&TopLabelGap, pairs, k)
}

pub fn rank_with<M: DivergenceMetric>(
    metric: &M,
    pairs: &[(Prediction, Prediction)],
    k: usize,
) -> Result<Vec<DivergenceRecord>, DivergenceError> {
    let mut records = pairs
        .iter()
        .map(|(task, reference)| {
            let (argmax_label, score) = metric.score(task, reference)?;
            Ok(DivergenceRecord {
                example_id: task.example_id.clone(),
                score,
                argmax_label,
                rank: 0,
                task_model_id: task.model_id.clone(),
                ref_model_id: reference.model_id.clone(),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let keep = k.min(records.len());
    if keep == 0 {
        return Ok(Vec::new());
    }
    if keep < records.len() {
        records.select_nth_unstable_by(keep - 1, hardness_order);
        records.truncate(keep);
    }
    records.sort_unstable_by(hardness_order);
    for (i, r) in records.iter_mut().enumerate() {
        r.rank = i + 1;
    }
    Ok(records)
}
