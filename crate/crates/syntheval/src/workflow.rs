//! Stage runners: read inputs from the workspace, call the pipeline, write
//! artifacts and a manifest. The CLI and the workbench service both go
//! through these functions, so they produce identical files.

use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicUsize;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::json;

use syntheval_core::divergence::{rank_hard_subset, DivergenceRecord};
use syntheval_core::lexicon::LexiconSet;
use syntheval_core::ngram::{ngram_counts, NgramStat};
use syntheval_core::prompt::TaskSpec;
use syntheval_core::protocol::GenerationConfig;
use syntheval_core::query::{sample_queries, Query, SamplingStrategy};
use syntheval_core::scoring::Prediction;
use syntheval_core::segment::RuleSegmenter;
use syntheval_core::template::{ExpandedCase, Template};
use syntheval_core::verify::TemplateResult;

use crate::backend::Backend;
use crate::pipeline::{self, GenerateSummary, GenerationFiles};
use crate::store::{load_records, write_json, write_records, Clock, ManifestBuilder, Stage, SynthExample, Workspace};

/// How the classification prompt is built.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum PromptMode {
    /// The task's built-in 4-shot prompt.
    #[default]
    Fewshot,
    /// The bare text, for models that classify their input directly.
    Raw,
}

pub fn task_spec(task: &str, mode: PromptMode) -> Result<TaskSpec> {
    let spec = TaskSpec::builtin(task)?;
    Ok(match mode {
        PromptMode::Fewshot => spec,
        PromptMode::Raw => spec.raw_input(),
    })
}

/// Common context of a stage invocation.
#[derive(Debug, Clone)]
pub struct Run {
    pub ws: Workspace,
    pub run_id: String,
    pub clock: Clock,
}

impl Run {
    pub fn new(ws: Workspace, run_id: impl Into<String>, clock: Clock) -> Self {
        Self { ws, run_id: run_id.into(), clock }
    }

    pub fn stage_dir(&self, stage: Stage) -> PathBuf {
        self.ws.stage_dir(&self.run_id, stage)
    }

    fn manifest(&self, stage: Stage, config: serde_json::Value) -> ManifestBuilder {
        ManifestBuilder::start(&self.run_id, stage, self.clock, config)
    }

    pub fn queries_path(&self) -> PathBuf {
        self.stage_dir(Stage::Sample).join("queries.jsonl")
    }

    pub fn dataset_path(&self) -> PathBuf {
        self.stage_dir(Stage::Generate).join("dataset.jsonl")
    }

    pub fn predictions_path(&self, model_id: &str) -> PathBuf {
        self.stage_dir(Stage::Predict).join(format!("{}.jsonl", file_safe(model_id)))
    }

    pub fn ranked_path(&self) -> PathBuf {
        self.stage_dir(Stage::Rank).join("ranked.jsonl")
    }

    pub fn ngrams_path(&self) -> PathBuf {
        self.stage_dir(Stage::Analyze).join("ngrams.json")
    }

    pub fn result_path(&self, template: &str, model_id: &str) -> PathBuf {
        self.stage_dir(Stage::Verify).join(format!("{}__{}.json", file_safe(template), file_safe(model_id)))
    }
}

/// Keeps ASCII alphanumerics, `-`, `_` and `.`; everything else becomes `_`.
pub fn file_safe(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' }).collect()
}

fn with_extension_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_stem().unwrap_or_default().to_os_string();
    name.push(suffix);
    path.with_file_name(name)
}

/// Manifest path for an artifact: `x.jsonl` gets `x.manifest.json`.
pub fn manifest_path_for(artifact: &Path) -> PathBuf {
    with_extension_suffix(artifact, ".manifest.json")
}

pub fn read_corpus(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading corpus {}", path.display()))?;
    Ok(text.lines().map(str::to_string).collect())
}

pub struct SampleArgs {
    pub corpus: PathBuf,
    pub k_words: usize,
    pub n_queries: usize,
    pub seed: u64,
    pub strategy: SamplingStrategy,
}

pub fn sample(run: &Run, args: &SampleArgs) -> Result<(PathBuf, Vec<Query>)> {
    let corpus = read_corpus(&args.corpus)?;
    let queries = sample_queries(&corpus, args.k_words, args.n_queries, args.seed, args.strategy)?;
    let out = run.queries_path();
    write_records(&out, &queries)?;
    let mut m = run.manifest(
        Stage::Sample,
        json!({"k_words": args.k_words, "n_queries": args.n_queries, "seed": args.seed, "strategy": args.strategy}),
    );
    m.input(&args.corpus).output(&out).count("corpus_lines", corpus.len() as u64).count("queries", queries.len() as u64);
    m.write(&run.ws, manifest_path_for(&out))?;
    Ok((out, queries))
}

pub async fn generate<B: Backend>(
    run: &Run,
    queries_path: &Path,
    backend: &B,
    config: &GenerationConfig,
    max_in_flight: usize,
) -> Result<GenerateSummary> {
    config.validate()?;
    let queries: Vec<Query> = load_records(queries_path)?;
    let dir = run.stage_dir(Stage::Generate);
    let files = GenerationFiles {
        dataset: dir.join("dataset.jsonl"),
        drops: dir.join("drops.jsonl"),
        errors: dir.join("errors.jsonl"),
    };
    let mut m = run.manifest(
        Stage::Generate,
        json!({"top_p": config.top_p, "max_tokens": config.max_tokens, "seed": config.seed, "model_id": backend.model_id()}),
    );
    let summary = pipeline::build_synthtest(&queries, backend, config, &RuleSegmenter, max_in_flight, &files).await?;
    let examples = crate::store::read_records::<serde_json::Value>(&files.dataset)?.count();
    let dropped = crate::store::read_records::<serde_json::Value>(&files.drops)?.count();
    m.input(queries_path)
        .output(&files.dataset)
        .output(&files.drops)
        .output(&files.errors)
        .count("queries", queries.len() as u64)
        .count("examples", examples as u64)
        .count("dropped", dropped as u64)
        .count("errors", summary.errors as u64);
    m.write(&run.ws, dir.join("manifest.json"))?;
    Ok(summary)
}

pub async fn predict<B: Backend>(
    run: &Run,
    dataset_path: &Path,
    backend: &B,
    spec: &TaskSpec,
    mode: PromptMode,
    max_in_flight: usize,
) -> Result<PathBuf> {
    spec.validate()?;
    let items: Vec<(String, String)> =
        load_records::<SynthExample>(dataset_path)?.into_iter().map(|e| (e.id, e.text)).collect();
    let predictions = pipeline::predict_texts(&items, backend, spec, max_in_flight).await?;
    let out = run.predictions_path(backend.model_id());
    write_records(&out, &predictions)?;
    let mut m = run.manifest(
        Stage::Predict,
        json!({"task": spec.task_id, "model_id": backend.model_id(), "prompt": mode,
               "prompt_format": syntheval_core::prompt::PROMPT_FORMAT_VERSION}),
    );
    m.input(dataset_path).output(&out).count("predictions", predictions.len() as u64);
    m.write(&run.ws, manifest_path_for(&out))?;
    Ok(out)
}

pub fn rank(run: &Run, task_preds: &Path, ref_preds: &Path, k: usize) -> Result<(PathBuf, Vec<DivergenceRecord>)> {
    let task: Vec<Prediction> = load_records(task_preds)?;
    let reference: Vec<Prediction> = load_records(ref_preds)?;
    let pairs = pipeline::join_predictions(task, reference)?;
    let ranked = rank_hard_subset(&pairs, k)?;
    let out = run.ranked_path();
    write_records(&out, &ranked)?;
    let mut m = run.manifest(Stage::Rank, json!({"k": k}));
    m.input(task_preds).input(ref_preds).output(&out).count("pairs", pairs.len() as u64).count("ranked", ranked.len() as u64);
    m.write(&run.ws, manifest_path_for(&out))?;
    Ok((out, ranked))
}

pub struct AnalyzeArgs {
    pub ranked: PathBuf,
    pub dataset: PathBuf,
    pub n_min: usize,
    pub n_max: usize,
    pub min_count: usize,
}

pub fn hard_texts(ranked: &Path, dataset: &Path) -> Result<std::collections::BTreeMap<String, String>> {
    let ranked: Vec<DivergenceRecord> = load_records(ranked)?;
    let examples = crate::store::read_records::<SynthExample>(dataset)?.collect::<Result<Vec<_>, _>>()?;
    Ok(pipeline::hard_subset_texts(&ranked, examples))
}

pub fn analyze(run: &Run, args: &AnalyzeArgs) -> Result<(PathBuf, Vec<NgramStat>)> {
    let texts = hard_texts(&args.ranked, &args.dataset)?;
    let stats = ngram_counts(&texts, args.n_min, args.n_max, args.min_count)?;
    let out = run.ngrams_path();
    write_json(&out, &stats)?;
    let mut m = run.manifest(
        Stage::Analyze,
        json!({"n_min": args.n_min, "n_max": args.n_max, "min_count": args.min_count}),
    );
    m.input(&args.ranked).input(&args.dataset).output(&out).count("texts", texts.len() as u64).count("ngrams", stats.len() as u64);
    m.write(&run.ws, manifest_path_for(&out))?;
    Ok((out, stats))
}

/// Finds a template given as a path or a bare name: tried as given
/// (relative to the root), then inside the templates directory.
pub fn locate_template(ws: &Workspace, given: &Path) -> Result<PathBuf> {
    let direct = ws.resolve(given);
    if direct.is_file() {
        return Ok(direct);
    }
    let mut in_dir = ws.templates_dir().join(given);
    if in_dir.is_file() {
        return Ok(in_dir);
    }
    in_dir.set_extension("json");
    if in_dir.is_file() {
        return Ok(in_dir);
    }
    bail!("template {} not found", given.display())
}

pub fn expand_cases(template: &Template, lexicons: &LexiconSet) -> Result<Vec<ExpandedCase>> {
    Ok(syntheval_core::template::expand(template, lexicons)?)
}

#[derive(Debug, Clone)]
pub struct VerifyOutput {
    pub result: TemplateResult,
    pub path: PathBuf,
}

/// Expands, evaluates and writes `<template>__<model>.json` under the
/// verify stage. An aborted run still writes its partial result before
/// failing.
pub async fn verify<B: Backend>(
    run: &Run,
    template: &Template,
    lexicons: &LexiconSet,
    backend: &B,
    mode: PromptMode,
    max_in_flight: usize,
    progress: Option<&AtomicUsize>,
) -> Result<VerifyOutput> {
    let spec = task_spec(&template.task, mode)?;
    let cases = expand_cases(template, lexicons)?;
    let path = run.result_path(&template.name, backend.model_id());
    let outcome = pipeline::evaluate_template(template, &cases, backend, &spec, max_in_flight, progress).await;
    let result = match &outcome {
        Ok(r) => r,
        Err(abort) => &abort.partial,
    };
    write_json(&path, result)?;
    let mut m = run.manifest(
        Stage::Verify,
        json!({"template": template.name, "model_id": backend.model_id(), "prompt": mode,
               "prompt_format": syntheval_core::prompt::PROMPT_FORMAT_VERSION}),
    );
    m.output(&path)
        .count("cases", cases.len() as u64)
        .count("evaluated", result.n_cases as u64)
        .count("correct", result.n_correct as u64)
        .count("failures", result.failures.len() as u64);
    let manifest_dir = run.stage_dir(Stage::Verify).join("manifests");
    m.write(&run.ws, manifest_dir.join(path.file_name().expect("result path has a file name")))?;
    let result = outcome?;
    Ok(VerifyOutput { result, path })
}
