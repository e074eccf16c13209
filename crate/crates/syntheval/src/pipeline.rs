//! The workflow stages over a backend: generation, prediction, ranking
//! input assembly, hard-subset analysis and template verification.
//!
//! Fan-out uses an ordered buffered stream, so results come back in input
//! order and every stage is equivalent to a sequential run.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicUsize, Ordering};

use futures::stream::{self, StreamExt, TryStreamExt};

use syntheval_core::divergence::DivergenceRecord;
use syntheval_core::prompt::TaskSpec;
use syntheval_core::protocol::GenerationConfig;
use syntheval_core::query::Query;
use syntheval_core::scoring::Prediction;
use syntheval_core::segment::SentenceSegmenter;
use syntheval_core::template::{ExpandedCase, Template};
use syntheval_core::verify::{CaseFailure, CaseResult, TemplateResult, MAX_CASE_FAILURE_RATE};

use crate::backend::{predict_label_distribution, Backend, PredictError};
use crate::store::{JsonlWriter, SkippedExample, StoreError, SynthExample};

/// Share of failed queries above which generation is aborted.
pub const MAX_GENERATION_FAILURE_RATE: f64 = 0.10;

/// Records per committed batch.
pub const BATCH_SIZE: usize = 64;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Predict(#[from] PredictError),
    #[error("{failures} of {total} queries failed; aborting (limit {:.0}%)", MAX_GENERATION_FAILURE_RATE * 100.0)]
    TooManyFailures { failures: usize, total: usize },
    #[error("duplicate example id {0:?}")]
    DuplicateId(String),
    #[error("no reference prediction for example {0:?}")]
    MissingReference(String),
}

/// Where generation writes. `errors` is rewritten on every run because
/// failed queries are retried.
#[derive(Debug, Clone)]
pub struct GenerationFiles {
    pub dataset: std::path::PathBuf,
    pub drops: std::path::PathBuf,
    pub errors: std::path::PathBuf,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GenerateSummary {
    pub queries: usize,
    /// Examples and drops carried over from an earlier, interrupted run.
    pub resumed: usize,
    pub examples: usize,
    pub dropped: usize,
    pub errors: usize,
}

/// Query words, then the continuation, cut to the first sentence.
pub fn assemble_text<S: SentenceSegmenter>(segmenter: &S, prompt: &str, raw: &str) -> String {
    let joined = if raw.starts_with(char::is_whitespace) { format!("{prompt}{raw}") } else { format!("{prompt} {raw}") };
    segmenter.first_sentence(&joined).trim().to_string()
}

/// An example, or the reason the query was dropped.
fn outcome<S: SentenceSegmenter>(
    segmenter: &S,
    model_id: &str,
    query: &Query,
    raw: String,
) -> Result<SynthExample, SkippedExample> {
    if raw.trim().is_empty() {
        return Err(SkippedExample { id: query.id.clone(), reason: "empty continuation".into() });
    }
    let text = assemble_text(segmenter, &query.prompt(), &raw);
    if text.is_empty() {
        return Err(SkippedExample { id: query.id.clone(), reason: "empty sentence".into() });
    }
    Ok(SynthExample { id: query.id.clone(), query: query.words.clone(), text, raw, model_id: model_id.into() })
}

fn existing_ids(path: &std::path::Path) -> Result<BTreeSet<String>, StoreError> {
    #[derive(serde::Deserialize)]
    struct IdOnly {
        id: String,
    }
    crate::store::read_records::<IdOnly>(path)?.map(|r| r.map(|r| r.id)).collect()
}

// The stream stages map indices to named async fns; closures taking
// references trip higher-ranked lifetime inference for `Send`.
async fn complete_query<'a, B: Backend>(
    backend: &'a B,
    config: &'a GenerationConfig,
    query: &'a Query,
) -> (&'a Query, Result<String, crate::backend::BackendError>) {
    (query, backend.complete(&query.prompt(), config).await)
}

async fn score_case<'a, B: Backend>(
    backend: &'a B,
    spec: &'a TaskSpec,
    case: &'a ExpandedCase,
) -> (&'a ExpandedCase, Result<Prediction, PredictError>) {
    let id = case.case_index.to_string();
    (case, predict_label_distribution(backend, spec, &id, &case.text).await)
}

/// Builds the synthetic test set. Example ids are query ids. Queries
/// whose id already appears in the dataset or drop file are skipped, so an
/// interrupted run can simply be restarted.
pub async fn build_synthtest<B: Backend, S: SentenceSegmenter + Sync>(
    queries: &[Query],
    backend: &B,
    config: &GenerationConfig,
    segmenter: &S,
    max_in_flight: usize,
    files: &GenerationFiles,
) -> Result<GenerateSummary, PipelineError> {
    let mut dataset = JsonlWriter::open(&files.dataset)?;
    let mut drops = JsonlWriter::open(&files.drops)?;
    let mut errors = JsonlWriter::create(&files.errors)?;
    let mut done = existing_ids(&files.dataset)?;
    done.extend(existing_ids(&files.drops)?);

    let mut summary = GenerateSummary { queries: queries.len(), ..Default::default() };
    let pending: Vec<&Query> = queries.iter().filter(|q| !done.contains(&q.id)).collect();
    summary.resumed = queries.len() - pending.len();
    let model_id = backend.model_id().to_string();

    let mut results = stream::iter(0..pending.len())
        .map(|i| complete_query(backend, config, pending[i]))
        .buffered(max_in_flight.max(1))
        .chunks(BATCH_SIZE);

    while let Some(batch) = results.next().await {
        let (mut ex, mut dr, mut er) = (Vec::new(), Vec::new(), Vec::new());
        for (q, result) in batch {
            match result {
                Ok(raw) => match outcome(segmenter, &model_id, q, raw) {
                    Ok(e) => ex.push(e),
                    Err(d) => dr.push(d),
                },
                Err(e) => {
                    tracing::warn!(query = %q.id, error = %e, "generation failed");
                    er.push(SkippedExample { id: q.id.clone(), reason: e.to_string() });
                }
            }
        }
        summary.examples += dataset.append_records(&ex)?;
        summary.dropped += drops.append_records(&dr)?;
        summary.errors += errors.append_records(&er)?;
        if summary.errors as f64 > MAX_GENERATION_FAILURE_RATE * queries.len() as f64 {
            return Err(PipelineError::TooManyFailures { failures: summary.errors, total: queries.len() });
        }
    }
    Ok(summary)
}

/// Label distributions for `(id, text)` pairs, in input order. The first
/// backend error aborts and names its example.
pub async fn predict_texts<B: Backend>(
    items: &[(String, String)],
    backend: &B,
    spec: &TaskSpec,
    max_in_flight: usize,
) -> Result<Vec<Prediction>, PredictError> {
    stream::iter(0..items.len())
        .map(|i| predict_label_distribution(backend, spec, &items[i].0, &items[i].1))
        .buffered(max_in_flight.max(1))
        .try_collect()
        .await
}

/// Pairs each task prediction with the reference prediction of the same
/// example, in task order.
pub fn join_predictions(
    task: Vec<Prediction>,
    reference: Vec<Prediction>,
) -> Result<Vec<(Prediction, Prediction)>, PipelineError> {
    let mut by_id = BTreeMap::new();
    for p in reference {
        let id = p.example_id.clone();
        if by_id.insert(id.clone(), p).is_some() {
            return Err(PipelineError::DuplicateId(id));
        }
    }
    let mut seen = BTreeSet::new();
    task.into_iter()
        .map(|t| {
            if !seen.insert(t.example_id.clone()) {
                return Err(PipelineError::DuplicateId(t.example_id));
            }
            let r = by_id.remove(&t.example_id).ok_or_else(|| PipelineError::MissingReference(t.example_id.clone()))?;
            Ok((t, r))
        })
        .collect()
}

/// Texts of the ranked examples, keyed by id.
pub fn hard_subset_texts<I>(ranked: &[DivergenceRecord], dataset: I) -> BTreeMap<String, String>
where
    I: IntoIterator<Item = SynthExample>,
{
    let wanted: BTreeSet<&str> = ranked.iter().map(|r| r.example_id.as_str()).collect();
    dataset.into_iter().filter(|e| wanted.contains(e.id.as_str())).map(|e| (e.id, e.text)).collect()
}

/// Verification stopped early; `partial` holds what was evaluated.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{failures} of {total} cases failed; aborting (limit {:.0}%)", MAX_CASE_FAILURE_RATE * 100.0)]
pub struct VerifyAbort {
    pub failures: usize,
    pub total: usize,
    pub partial: TemplateResult,
}

/// Scores every case and aggregates. Failed cases are recorded; more than
/// 5% of failures stops the run. `progress` counts evaluated cases.
pub async fn evaluate_template<B: Backend>(
    template: &Template,
    cases: &[ExpandedCase],
    backend: &B,
    spec: &TaskSpec,
    max_in_flight: usize,
    progress: Option<&AtomicUsize>,
) -> Result<TemplateResult, VerifyAbort> {
    let mut results = Vec::with_capacity(cases.len());
    let mut failures = Vec::new();
    let mut stream = stream::iter(0..cases.len())
        .map(|i| score_case(backend, spec, &cases[i]))
        .buffered(max_in_flight.max(1));
    let mut aborted = false;
    while let Some((case, prediction)) = stream.next().await {
        match prediction {
            Ok(p) => results.push(CaseResult::from_prediction(case, p)),
            Err(e) => failures.push(CaseFailure { case_index: case.case_index, error: e.source.to_string() }),
        }
        if let Some(counter) = progress {
            counter.fetch_add(1, Ordering::Relaxed);
        }
        if failures.len() as f64 > MAX_CASE_FAILURE_RATE * cases.len() as f64 {
            aborted = true;
            break;
        }
    }
    let n_failures = failures.len();
    let result = TemplateResult::from_cases(
        &template.name,
        &template.test_type,
        &template.gold_label,
        backend.model_id(),
        results,
        failures,
    );
    if aborted {
        Err(VerifyAbort { failures: n_failures, total: cases.len(), partial: result })
    } else {
        Ok(result)
    }
}
