//! Model backends: the HTTP client for the two-endpoint protocol and the
//! label-distribution helper built on top of it.

use std::collections::BTreeMap;
use std::future::Future;
use std::sync::Arc;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;
use tokio::sync::Semaphore;

use syntheval_core::prompt::{build_fewshot_prompt, TaskSpec};
use syntheval_core::protocol::{
    validate_options, BackendDescriptor, CompleteRequest, CompleteResponse, GenerationConfig, ProtocolError,
    ScoreOptionsRequest, ScoreOptionsResponse, COMPLETE_PATH, SCORE_OPTIONS_PATH,
};
use syntheval_core::scoring::{Prediction, ScoringError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error(transparent)]
    Precondition(#[from] ProtocolError),
    #[error("{model_id}: transport error: {message}")]
    Transport { model_id: String, message: String, timed_out: bool },
    #[error("{model_id}: HTTP {status}: {message}")]
    Status { model_id: String, status: u16, message: String },
    #[error("{model_id}: invalid response: {message}")]
    InvalidResponse { model_id: String, message: String },
}

impl BackendError {
    /// Transport failures, rate limiting and server errors are retried.
    pub fn is_retryable(&self) -> bool {
        match self {
            Self::Transport { .. } => true,
            Self::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

/// Anything that can serve the two protocol operations.
pub trait Backend: Send + Sync {
    fn model_id(&self) -> &str;

    /// Continuation text only, without the prompt.
    fn complete(&self, prompt: &str, config: &GenerationConfig) -> impl Future<Output = Result<String, BackendError>> + Send;

    /// One finite log-score per option.
    fn score_options(
        &self,
        prompt: &str,
        options: &[String],
    ) -> impl Future<Output = Result<BTreeMap<String, f64>, BackendError>> + Send;
}

impl<B: Backend> Backend for Arc<B> {
    fn model_id(&self) -> &str {
        (**self).model_id()
    }

    fn complete(&self, prompt: &str, config: &GenerationConfig) -> impl Future<Output = Result<String, BackendError>> + Send {
        (**self).complete(prompt, config)
    }

    fn score_options(
        &self,
        prompt: &str,
        options: &[String],
    ) -> impl Future<Output = Result<BTreeMap<String, f64>, BackendError>> + Send {
        (**self).score_options(prompt, options)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 3, initial_backoff: Duration::from_millis(250) }
    }
}

impl RetryPolicy {
    /// Delay before attempt `attempt` (0-based); doubles each time.
    pub fn backoff(&self, attempt: u32) -> Duration {
        if attempt == 0 {
            Duration::ZERO
        } else {
            self.initial_backoff.saturating_mul(1 << (attempt - 1).min(16))
        }
    }
}

/// HTTP client for one backend. Cheap to share behind an `Arc`; the
/// semaphore caps concurrent requests at `max_in_flight`.
#[derive(Debug)]
pub struct HttpBackend {
    descriptor: BackendDescriptor,
    base_url: String,
    client: reqwest::Client,
    limiter: Arc<Semaphore>,
    retry: RetryPolicy,
}

impl HttpBackend {
    pub fn new(descriptor: BackendDescriptor) -> Result<Self, BackendError> {
        descriptor.validate()?;
        let client = reqwest::Client::builder()
            .timeout(Duration::from_millis(descriptor.timeout_ms))
            .build()
            .map_err(|e| BackendError::Transport {
                model_id: descriptor.model_id.clone(),
                message: e.to_string(),
                timed_out: false,
            })?;
        Ok(Self {
            base_url: descriptor.base_url.trim_end_matches('/').to_string(),
            limiter: Arc::new(Semaphore::new(descriptor.max_in_flight)),
            descriptor,
            client,
            retry: RetryPolicy::default(),
        })
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn unsupported(&self, capability: &'static str) -> BackendError {
        ProtocolError::Unsupported { model_id: self.descriptor.model_id.clone(), capability }.into()
    }

    async fn post<Req: Serialize, Resp: DeserializeOwned>(&self, path: &str, body: &Req) -> Result<Resp, BackendError> {
        let mut last = None;
        for attempt in 0..self.retry.max_attempts.max(1) {
            tokio::time::sleep(self.retry.backoff(attempt)).await;
            let result = {
                let _permit = self.limiter.acquire().await.expect("limiter is never closed");
                self.post_once(path, body).await
            };
            match result {
                Ok(resp) => return Ok(resp),
                Err(e) if e.is_retryable() => {
                    tracing::debug!(model = %self.descriptor.model_id, attempt, error = %e, "retrying request");
                    last = Some(e);
                }
                Err(e) => return Err(e),
            }
        }
        Err(last.expect("at least one attempt"))
    }

    async fn post_once<Req: Serialize, Resp: DeserializeOwned>(&self, path: &str, body: &Req) -> Result<Resp, BackendError> {
        let model_id = &self.descriptor.model_id;
        let transport = |e: reqwest::Error| BackendError::Transport {
            model_id: model_id.clone(),
            timed_out: e.is_timeout(),
            message: e.to_string(),
        };
        let resp = self.client.post(format!("{}{path}", self.base_url)).json(body).send().await.map_err(transport)?;
        let status = resp.status();
        // The body is read in full before anything is returned, so a
        // timeout never leaks partial text.
        let bytes = resp.bytes().await.map_err(transport)?;
        if !status.is_success() {
            return Err(BackendError::Status {
                model_id: model_id.clone(),
                status: status.as_u16(),
                message: String::from_utf8_lossy(&bytes).trim().to_string(),
            });
        }
        serde_json::from_slice(&bytes)
            .map_err(|e| BackendError::InvalidResponse { model_id: model_id.clone(), message: e.to_string() })
    }
}

impl Backend for HttpBackend {
    fn model_id(&self) -> &str {
        &self.descriptor.model_id
    }

    async fn complete(&self, prompt: &str, config: &GenerationConfig) -> Result<String, BackendError> {
        config.validate()?;
        if !self.descriptor.kind.completes() {
            return Err(self.unsupported("completion"));
        }
        let resp: CompleteResponse = self.post(COMPLETE_PATH, &CompleteRequest::new(prompt, config)).await?;
        Ok(resp.text)
    }

    async fn score_options(&self, prompt: &str, options: &[String]) -> Result<BTreeMap<String, f64>, BackendError> {
        validate_options(options)?;
        if !self.descriptor.kind.scores() {
            return Err(self.unsupported("option scoring"));
        }
        let req = ScoreOptionsRequest { prompt: prompt.into(), options: options.to_vec() };
        let resp: ScoreOptionsResponse = self.post(SCORE_OPTIONS_PATH, &req).await?;
        check_logprobs(&self.descriptor.model_id, options, resp.logprobs)
    }
}

/// Keeps exactly the requested options and requires each to be finite.
pub fn check_logprobs(
    model_id: &str,
    options: &[String],
    mut logprobs: BTreeMap<String, f64>,
) -> Result<BTreeMap<String, f64>, BackendError> {
    let mut out = BTreeMap::new();
    for o in options {
        match logprobs.remove(o) {
            Some(v) if v.is_finite() => {
                out.insert(o.clone(), v);
            }
            Some(v) => {
                return Err(BackendError::InvalidResponse {
                    model_id: model_id.into(),
                    message: format!("score {v} for option {o:?} is not finite"),
                })
            }
            None => {
                return Err(BackendError::InvalidResponse {
                    model_id: model_id.into(),
                    message: format!("no score for option {o:?}"),
                })
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PredictFailure {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("example {example_id}: {source}")]
pub struct PredictError {
    pub example_id: String,
    pub source: PredictFailure,
}

/// Few-shot prompt, option scores, softmax over the task's labels.
pub async fn predict_label_distribution<B: Backend>(
    backend: &B,
    spec: &TaskSpec,
    example_id: &str,
    text: &str,
) -> Result<Prediction, PredictError> {
    let wrap = |source: PredictFailure| PredictError { example_id: example_id.into(), source };
    let prompt = build_fewshot_prompt(spec, text);
    let scores = backend.score_options(&prompt, &spec.options()).await.map_err(|e| wrap(e.into()))?;
    Prediction::from_option_scores(spec, example_id, backend.model_id(), &scores).map_err(|e| wrap(e.into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_doubles_from_250ms() {
        let p = RetryPolicy::default();
        assert_eq!(p.backoff(0), Duration::ZERO);
        assert_eq!(p.backoff(1), Duration::from_millis(250));
        assert_eq!(p.backoff(2), Duration::from_millis(500));
    }

    #[test]
    fn retryable_classification() {
        let status = |s| BackendError::Status { model_id: "m".into(), status: s, message: String::new() };
        assert!(status(503).is_retryable());
        assert!(status(429).is_retryable());
        assert!(!status(400).is_retryable());
        assert!(!BackendError::Precondition(ProtocolError::MaxTokens).is_retryable());
    }

    #[test]
    fn logprobs_must_cover_options() {
        let opts = vec!["positive".to_string(), "negative".to_string()];
        let got = BTreeMap::from([("positive".to_string(), -0.1), ("negative".to_string(), -2.0), ("x".to_string(), 0.0)]);
        assert_eq!(check_logprobs("m", &opts, got).unwrap().len(), 2);
        let missing = BTreeMap::from([("positive".to_string(), -0.1)]);
        assert!(check_logprobs("m", &opts, missing).is_err());
        let nan = BTreeMap::from([("positive".to_string(), f64::NAN), ("negative".to_string(), 0.0)]);
        assert!(check_logprobs("m", &opts, nan).is_err());
    }

    #[tokio::test]
    async fn bad_top_p_fails_before_network() {
        let b = HttpBackend::new(BackendDescriptor::new("m", "http://127.0.0.1:9")).unwrap();
        let cfg = GenerationConfig { top_p: 1.5, ..Default::default() };
        assert_eq!(b.complete("abc", &cfg).await, Err(BackendError::Precondition(ProtocolError::TopP(1.5))));
        let dup = vec!["a".to_string(), "a".to_string()];
        assert!(matches!(b.score_options("p", &dup).await, Err(BackendError::Precondition(_))));
    }
}
