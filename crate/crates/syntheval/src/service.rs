//! Workbench REST service over the workspace: templates, lexicons, hard
//! examples, n-grams, verification jobs and results.
//!
//! Verification runs through [`crate::workflow::verify`], the same code
//! path as the CLI. Jobs run in-process on a bounded pool.

use std::collections::BTreeMap;
use std::future::Future;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::{Path as UrlPath, Query as UrlQuery, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tokio::sync::Semaphore;
use tokio::task::JoinHandle;

use syntheval_core::divergence::DivergenceRecord;
use syntheval_core::ngram::{cluster_by_ngram, ngram_counts, DEFAULT_MIN_COUNT, DEFAULT_N_MAX, DEFAULT_N_MIN};
use syntheval_core::scoring::Prediction;
use syntheval_core::template::{ExpandedCase, Template, TemplateSource};
use syntheval_core::verify::TemplateResult;

use crate::backend::HttpBackend;
use crate::catalog::{self, CatalogError, TemplateStore};
use crate::report::load_results;
use crate::store::{load_records, Clock, Stage, StoreError, Workspace};
use crate::workflow::{self, PromptMode, Run};

pub const DEFAULT_JOB_WORKERS: usize = 2;
pub const PREVIEW_LIMIT: usize = 50;
pub const DEFAULT_PAGE_LIMIT: usize = 100;
pub const MAX_PAGE_LIMIT: usize = 1000;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub ws: Workspace,
    pub run_id: String,
    pub clock: Clock,
    pub prompt_mode: PromptMode,
    pub max_in_flight: usize,
    pub job_workers: usize,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, message: message.into() }
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }
}

impl From<CatalogError> for ApiError {
    fn from(e: CatalogError) -> Self {
        let status = match &e {
            CatalogError::NotFound(_) => StatusCode::NOT_FOUND,
            CatalogError::Exists(_) => StatusCode::CONFLICT,
            CatalogError::InvalidName(_) | CatalogError::Invalid(_) => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match &e {
            StoreError::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => Self::not_found(e.to_string()),
            _ => Self::internal(e),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Clone, Copy, Deserialize)]
pub struct Page {
    #[serde(default)]
    pub offset: usize,
    pub limit: Option<usize>,
}

impl Page {
    fn apply<T>(&self, items: Vec<T>) -> Vec<T> {
        let limit = self.limit.unwrap_or(DEFAULT_PAGE_LIMIT).min(MAX_PAGE_LIMIT);
        items.into_iter().skip(self.offset).take(limit).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub completed: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobView {
    pub job_id: String,
    pub template_name: String,
    pub model_id: String,
    pub state: JobState,
    pub progress: Progress,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy_pct: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

struct Job {
    view: JobView,
    completed: Arc<AtomicUsize>,
}

impl Job {
    fn snapshot(&self) -> JobView {
        let mut v = self.view.clone();
        if v.state == JobState::Running {
            v.progress.completed = self.completed.load(Ordering::Relaxed).min(v.progress.total);
        }
        v
    }

    /// Moves forward only: queued, running, then done or failed.
    fn advance(&mut self, next: JobState) {
        let rank = |s: JobState| match s {
            JobState::Queued => 0,
            JobState::Running => 1,
            JobState::Done | JobState::Failed => 2,
        };
        if rank(next) > rank(self.view.state) {
            self.view.state = next;
        }
    }
}

struct Jobs {
    by_id: Mutex<BTreeMap<String, Job>>,
    pool: Arc<Semaphore>,
    next_id: AtomicU64,
    handles: Mutex<Vec<JoinHandle<()>>>,
}

impl Jobs {
    fn update(&self, id: &str, f: impl FnOnce(&mut Job)) {
        if let Some(job) = self.by_id.lock().expect("job table lock").get_mut(id) {
            f(job);
        }
    }
}

pub struct AppState {
    config: ServiceConfig,
    templates: TemplateStore,
    backends: BTreeMap<String, Arc<HttpBackend>>,
    jobs: Jobs,
}

impl AppState {
    pub fn new(config: ServiceConfig, backends: Vec<HttpBackend>) -> Arc<Self> {
        let templates = TemplateStore::new(config.ws.templates_dir());
        let backends = backends.into_iter().map(|b| (b.descriptor().model_id.clone(), Arc::new(b))).collect();
        let workers = config.job_workers.max(1);
        Arc::new(Self {
            config,
            templates,
            backends,
            jobs: Jobs {
                by_id: Mutex::new(BTreeMap::new()),
                pool: Arc::new(Semaphore::new(workers)),
                next_id: AtomicU64::new(1),
                handles: Mutex::new(Vec::new()),
            },
        })
    }

    fn run(&self, run_id: Option<&str>) -> Run {
        Run::new(self.config.ws.clone(), run_id.unwrap_or(&self.config.run_id), self.config.clock)
    }

    /// Waits for every submitted job to finish.
    pub async fn drain_jobs(&self) {
        loop {
            let handles: Vec<JoinHandle<()>> = std::mem::take(&mut *self.jobs.handles.lock().expect("handles lock"));
            if handles.is_empty() {
                return;
            }
            for h in handles {
                let _ = h.await;
            }
        }
    }
}

async fn list_templates(State(st): State<Arc<AppState>>, UrlQuery(page): UrlQuery<Page>) -> ApiResult<Json<Vec<Template>>> {
    Ok(Json(page.apply(st.templates.list()?)))
}

fn parse_template_body(body: serde_json::Value) -> ApiResult<Template> {
    let source: TemplateSource =
        serde_json::from_value(body).map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))?;
    Template::try_from(source).map_err(|e| CatalogError::Invalid(e).into())
}

async fn create_template(
    State(st): State<Arc<AppState>>,
    Json(body): Json<serde_json::Value>,
) -> ApiResult<(StatusCode, Json<Template>)> {
    let template = parse_template_body(body)?;
    st.templates.create(&template)?;
    Ok((StatusCode::CREATED, Json(template)))
}

async fn get_template(State(st): State<Arc<AppState>>, UrlPath(name): UrlPath<String>) -> ApiResult<Json<Template>> {
    Ok(Json(st.templates.get(&name)?))
}

async fn put_template(
    State(st): State<Arc<AppState>>,
    UrlPath(name): UrlPath<String>,
    Json(body): Json<serde_json::Value>,
) -> ApiResult<Json<Template>> {
    let template = parse_template_body(body)?;
    st.templates.update(&name, &template)?;
    Ok(Json(template))
}

async fn delete_template(State(st): State<Arc<AppState>>, UrlPath(name): UrlPath<String>) -> ApiResult<StatusCode> {
    st.templates.delete(&name)?;
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Preview {
    pub count: u64,
    pub sample_cases: Vec<ExpandedCase>,
}

/// Previews the stored template, or the draft in the body when present.
async fn preview_template(
    State(st): State<Arc<AppState>>,
    UrlPath(name): UrlPath<String>,
    body: axum::body::Bytes,
) -> ApiResult<Json<Preview>> {
    let template = if body.iter().all(u8::is_ascii_whitespace) {
        st.templates.get(&name)?
    } else {
        let value: serde_json::Value = serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(e.to_string()))?;
        parse_template_body(value)?
    };
    let lexicons = catalog::load_lexicon_dir(st.config.ws.lexicons_dir())?;
    let cases = template.cases(&lexicons).map_err(CatalogError::Invalid)?;
    let count = cases.total();
    Ok(Json(Preview { count, sample_cases: cases.take(PREVIEW_LIMIT).collect() }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LexiconSummary {
    pub name: String,
    pub size: usize,
}

async fn list_lexicons(State(st): State<Arc<AppState>>, UrlQuery(page): UrlQuery<Page>) -> ApiResult<Json<Vec<LexiconSummary>>> {
    let set = catalog::load_lexicon_dir(st.config.ws.lexicons_dir())?;
    let all = set.iter().map(|l| LexiconSummary { name: l.name().into(), size: l.len() }).collect();
    Ok(Json(page.apply(all)))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LexiconBody {
    pub name: String,
    pub entries: Vec<String>,
}

async fn get_lexicon(State(st): State<Arc<AppState>>, UrlPath(name): UrlPath<String>) -> ApiResult<Json<LexiconBody>> {
    let set = catalog::load_lexicon_dir(st.config.ws.lexicons_dir())?;
    let lex = set.get(&name).ok_or_else(|| ApiError::not_found(format!("lexicon {name:?} not found")))?;
    Ok(Json(LexiconBody { name: lex.name().into(), entries: lex.entries().to_vec() }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct VerifyRequest {
    pub template: String,
    pub model_id: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct JobCreated {
    pub job_id: String,
}

async fn submit_verify(
    State(st): State<Arc<AppState>>,
    Json(req): Json<VerifyRequest>,
) -> ApiResult<(StatusCode, Json<JobCreated>)> {
    let template = st.templates.get(&req.template)?;
    let backend = st
        .backends
        .get(&req.model_id)
        .cloned()
        .ok_or_else(|| ApiError::bad_request(format!("no backend configured for model {:?}", req.model_id)))?;
    let lexicons = catalog::load_lexicon_dir(st.config.ws.lexicons_dir())?;
    let total = syntheval_core::template::expansion_count(&template, &lexicons).map_err(CatalogError::Invalid)?;

    let job_id = format!("job-{:06}", st.jobs.next_id.fetch_add(1, Ordering::Relaxed));
    let completed = Arc::new(AtomicUsize::new(0));
    let view = JobView {
        job_id: job_id.clone(),
        template_name: template.name.clone(),
        model_id: req.model_id.clone(),
        state: JobState::Queued,
        progress: Progress { completed: 0, total: total as usize },
        result_path: None,
        accuracy_pct: None,
        error: None,
    };
    st.jobs.by_id.lock().expect("job table lock").insert(job_id.clone(), Job { view, completed: completed.clone() });

    let state = st.clone();
    let id = job_id.clone();
    let handle = tokio::spawn(async move {
        let _permit = state.jobs.pool.clone().acquire_owned().await.expect("pool is never closed");
        state.jobs.update(&id, |j| j.advance(JobState::Running));
        let run = state.run(None);
        let outcome = workflow::verify(
            &run,
            &template,
            &lexicons,
            &backend,
            state.config.prompt_mode,
            state.config.max_in_flight,
            Some(&completed),
        )
        .await;
        state.jobs.update(&id, |j| match outcome {
            Ok(out) => {
                j.view.progress.completed = out.result.n_cases + out.result.failures.len();
                j.view.result_path = Some(run.ws.display_path(&out.path));
                j.view.accuracy_pct = Some(out.result.accuracy_pct);
                j.advance(JobState::Done);
            }
            Err(e) => {
                j.view.progress.completed = completed.load(Ordering::Relaxed);
                j.view.error = Some(format!("{e:#}"));
                j.advance(JobState::Failed);
            }
        });
    });
    st.jobs.handles.lock().expect("handles lock").push(handle);
    Ok((StatusCode::ACCEPTED, Json(JobCreated { job_id })))
}

async fn list_jobs(State(st): State<Arc<AppState>>, UrlQuery(page): UrlQuery<Page>) -> Json<Vec<JobView>> {
    let all = st.jobs.by_id.lock().expect("job table lock").values().map(Job::snapshot).collect();
    Json(page.apply(all))
}

async fn get_job(State(st): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<JobView>> {
    let jobs = st.jobs.by_id.lock().expect("job table lock");
    let job = jobs.get(&id).ok_or_else(|| ApiError::not_found(format!("job {id:?} not found")))?;
    Ok(Json(job.snapshot()))
}

#[derive(Debug, Deserialize)]
pub struct ResultsQuery {
    pub template: Option<String>,
    pub model: Option<String>,
    pub run: Option<String>,
    #[serde(default)]
    pub offset: usize,
    pub limit: Option<usize>,
}

impl ResultsQuery {
    fn page(&self) -> Page {
        Page { offset: self.offset, limit: self.limit }
    }
}

async fn list_results(State(st): State<Arc<AppState>>, UrlQuery(q): UrlQuery<ResultsQuery>) -> ApiResult<Json<Vec<TemplateResult>>> {
    let dir = st.run(q.run.as_deref()).stage_dir(Stage::Verify);
    let all = if dir.is_dir() { load_results(&dir)? } else { Vec::new() };
    let filtered = all
        .into_iter()
        .filter(|r| q.template.as_ref().is_none_or(|t| *t == r.template_name))
        .filter(|r| q.model.as_ref().is_none_or(|m| *m == r.model_id))
        .collect();
    Ok(Json(q.page().apply(filtered)))
}

#[derive(Debug, Deserialize)]
pub struct RunQuery {
    pub run: Option<String>,
    #[serde(default)]
    pub offset: usize,
    pub limit: Option<usize>,
}

impl RunQuery {
    fn page(&self) -> Page {
        Page { offset: self.offset, limit: self.limit }
    }
}

/// A ranked record with its text and, when available, both models'
/// probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardExample {
    #[serde(flatten)]
    pub record: DivergenceRecord,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_probs: Option<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ref_probs: Option<BTreeMap<String, f64>>,
}

fn probs_by_id(path: PathBuf) -> BTreeMap<String, BTreeMap<String, f64>> {
    if !path.is_file() {
        return BTreeMap::new();
    }
    load_records::<Prediction>(&path)
        .map(|ps| ps.into_iter().map(|p| (p.example_id, p.probs)).collect())
        .unwrap_or_default()
}

async fn hard_examples(State(st): State<Arc<AppState>>, UrlQuery(q): UrlQuery<RunQuery>) -> ApiResult<Json<Vec<HardExample>>> {
    let run = st.run(q.run.as_deref());
    let ranked: Vec<DivergenceRecord> = q.page().apply(load_records(run.ranked_path())?);
    let texts = crate::pipeline::hard_subset_texts(&ranked, load_records(run.dataset_path())?);
    let mut task = BTreeMap::new();
    let mut reference = BTreeMap::new();
    if let Some(first) = ranked.first() {
        task = probs_by_id(run.predictions_path(&first.task_model_id));
        reference = probs_by_id(run.predictions_path(&first.ref_model_id));
    }
    let out = ranked
        .into_iter()
        .map(|record| HardExample {
            text: texts.get(&record.example_id).cloned().unwrap_or_default(),
            task_probs: task.get(&record.example_id).cloned(),
            ref_probs: reference.get(&record.example_id).cloned(),
            record,
        })
        .collect();
    Ok(Json(out))
}

#[derive(Debug, Deserialize)]
pub struct NgramQuery {
    pub run: Option<String>,
    pub n_min: Option<usize>,
    pub n_max: Option<usize>,
    pub min_count: Option<usize>,
    #[serde(default)]
    pub offset: usize,
    pub limit: Option<usize>,
}

impl NgramQuery {
    fn page(&self) -> Page {
        Page { offset: self.offset, limit: self.limit }
    }
}

async fn ngrams(
    State(st): State<Arc<AppState>>,
    UrlQuery(q): UrlQuery<NgramQuery>,
) -> ApiResult<Json<Vec<syntheval_core::ngram::NgramStat>>> {
    let run = st.run(q.run.as_deref());
    let texts = workflow::hard_texts(&run.ranked_path(), &run.dataset_path()).map_err(|e| ApiError::not_found(format!("{e:#}")))?;
    let stats = ngram_counts(
        &texts,
        q.n_min.unwrap_or(DEFAULT_N_MIN),
        q.n_max.unwrap_or(DEFAULT_N_MAX),
        q.min_count.unwrap_or(DEFAULT_MIN_COUNT),
    )
    .map_err(|e| ApiError::bad_request(e.to_string()))?;
    Ok(Json(q.page().apply(stats)))
}

#[derive(Debug, Deserialize)]
pub struct ClusterQuery {
    pub run: Option<String>,
    pub ngram: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Cluster {
    pub ngram: Vec<String>,
    pub example_ids: Vec<String>,
}

async fn ngram_cluster(State(st): State<Arc<AppState>>, UrlQuery(q): UrlQuery<ClusterQuery>) -> ApiResult<Json<Cluster>> {
    let run = st.run(q.run.as_deref());
    let texts = workflow::hard_texts(&run.ranked_path(), &run.dataset_path()).map_err(|e| ApiError::not_found(format!("{e:#}")))?;
    let ngram: Vec<String> = q.ngram.split_whitespace().map(str::to_string).collect();
    if ngram.is_empty() {
        return Err(ApiError::bad_request("ngram must contain at least one token"));
    }
    let example_ids = cluster_by_ngram(&texts, &ngram);
    Ok(Json(Cluster { ngram, example_ids }))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/templates", get(list_templates).post(create_template))
        .route("/api/templates/{name}", get(get_template).put(put_template).delete(delete_template))
        .route("/api/templates/{name}/preview", post(preview_template))
        .route("/api/lexicons", get(list_lexicons))
        .route("/api/lexicons/{name}", get(get_lexicon))
        .route("/api/verify", post(submit_verify))
        .route("/api/jobs", get(list_jobs))
        .route("/api/jobs/{id}", get(get_job))
        .route("/api/results", get(list_results))
        .route("/api/hard-examples", get(hard_examples))
        .route("/api/ngrams", get(ngrams))
        .route("/api/ngrams/cluster", get(ngram_cluster))
        .with_state(state)
}

/// Serves until `shutdown` resolves, then waits for running jobs.
pub async fn serve(
    listener: TcpListener,
    state: Arc<AppState>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    if !state.config.ws.root().is_dir() {
        return Err(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("run directory {} does not exist", state.config.ws.root().display()),
        ));
    }
    axum::serve(listener, router(state.clone())).with_graceful_shutdown(shutdown).await?;
    state.drain_jobs().await;
    Ok(())
}
