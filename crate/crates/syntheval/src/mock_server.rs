//! Local HTTP server implementing the backend protocol with the
//! deterministic mock classifier and completion rules.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::post;
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tokio::task::JoinHandle;

use syntheval_core::mock::{seeded_completion, LexiconClassifierRule, MockClassifier};
use syntheval_core::protocol::{
    validate_options, CompleteRequest, CompleteResponse, GenerationConfig, ScoreOptionsRequest, ScoreOptionsResponse,
    COMPLETE_PATH, SCORE_OPTIONS_PATH,
};

use crate::catalog::{load_lexicon_as, CatalogError};

/// Rule file for `serve-mock`. Term paths are relative to the rule file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockRuleFile {
    pub model_id: String,
    pub positive_terms: PathBuf,
    pub negative_terms: PathBuf,
    pub negation_aware: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub negation_markers: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positive_option: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub negative_option: Option<String>,
    /// Used when a completion request carries no seed.
    #[serde(default)]
    pub completion_seed: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum MockError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Overlap(#[from] syntheval_core::mock::OverlappingTerms),
}

#[derive(Debug, Clone)]
pub struct MockModel {
    pub model_id: String,
    pub classifier: MockClassifier,
    pub completion_seed: u64,
}

impl MockModel {
    pub fn new(model_id: impl Into<String>, rule: LexiconClassifierRule) -> Self {
        Self { model_id: model_id.into(), classifier: MockClassifier::new(rule), completion_seed: 0 }
    }

    pub fn from_rule_file(path: impl AsRef<Path>) -> Result<Self, MockError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| MockError::Io { path: path.into(), source })?;
        let file: MockRuleFile =
            serde_json::from_str(&text).map_err(|source| MockError::Json { path: path.into(), source })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let positive = load_lexicon_as(&base.join(&file.positive_terms), "POSITIVE_TERMS")?;
        let negative = load_lexicon_as(&base.join(&file.negative_terms), "NEGATIVE_TERMS")?;
        let mut rule = LexiconClassifierRule::new(positive.entries(), negative.entries(), file.negation_aware)?;
        if let Some(markers) = file.negation_markers {
            rule = rule.with_negation_markers(markers);
        }
        let mut classifier = MockClassifier::new(rule);
        if let Some(o) = file.positive_option {
            classifier.positive_option = o;
        }
        if let Some(o) = file.negative_option {
            classifier.negative_option = o;
        }
        Ok(Self { model_id: file.model_id, classifier, completion_seed: file.completion_seed })
    }

    pub fn complete(&self, req: &CompleteRequest) -> Result<String, String> {
        let config = GenerationConfig { top_p: req.top_p, max_tokens: req.max_tokens, seed: req.seed };
        config.validate().map_err(|e| e.to_string())?;
        Ok(seeded_completion(req.seed.unwrap_or(self.completion_seed), &req.prompt, req.max_tokens))
    }

    pub fn score(&self, req: &ScoreOptionsRequest) -> Result<ScoreOptionsResponse, String> {
        validate_options(&req.options).map_err(|e| e.to_string())?;
        Ok(ScoreOptionsResponse { logprobs: self.classifier.score_options(&req.prompt, &req.options) })
    }
}

#[derive(Serialize)]
struct ErrorBody {
    error: String,
}

type Reply<T> = Result<Json<T>, (StatusCode, Json<ErrorBody>)>;

fn bad_request(error: String) -> (StatusCode, Json<ErrorBody>) {
    (StatusCode::BAD_REQUEST, Json(ErrorBody { error }))
}

async fn complete(State(model): State<Arc<MockModel>>, Json(req): Json<CompleteRequest>) -> Reply<CompleteResponse> {
    model.complete(&req).map(|text| Json(CompleteResponse { text })).map_err(bad_request)
}

async fn score_options(
    State(model): State<Arc<MockModel>>,
    Json(req): Json<ScoreOptionsRequest>,
) -> Reply<ScoreOptionsResponse> {
    model.score(&req).map(Json).map_err(bad_request)
}

pub fn router(model: Arc<MockModel>) -> Router {
    Router::new()
        .route(COMPLETE_PATH, post(complete))
        .route(SCORE_OPTIONS_PATH, post(score_options))
        .with_state(model)
}

/// A mock server running on a background task.
pub struct RunningMock {
    pub addr: SocketAddr,
    handle: JoinHandle<()>,
}

impl RunningMock {
    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for RunningMock {
    fn drop(&mut self) {
        self.handle.abort();
    }
}

/// Binds `addr` (port 0 picks a free port) and serves in the background
/// until the returned handle is dropped.
pub async fn spawn(model: MockModel, addr: SocketAddr) -> std::io::Result<RunningMock> {
    let listener = TcpListener::bind(addr).await?;
    let addr = listener.local_addr()?;
    let app = router(Arc::new(model));
    let handle = tokio::spawn(async move {
        if let Err(e) = axum::serve(listener, app).await {
            tracing::error!(error = %e, "mock server stopped");
        }
    });
    Ok(RunningMock { addr, handle })
}
