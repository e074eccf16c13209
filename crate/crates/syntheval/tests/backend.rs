mod common;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::post;
use axum::Router;
use futures::future::join_all;
use serde_json::{json, Value};

use syntheval::backend::{predict_label_distribution, Backend, BackendError, HttpBackend, RetryPolicy};
use syntheval::core::prompt::TaskSpec;
use syntheval::core::protocol::{BackendDescriptor, BackendKind, GenerationConfig, ProtocolError};

/// What the scripted server does for request number `n` (0-based).
type Script = dyn Fn(usize) -> (StatusCode, String, Duration) + Send + Sync;

#[derive(Clone)]
struct Scripted {
    script: Arc<Script>,
    seen: Arc<AtomicUsize>,
    active: Arc<AtomicUsize>,
    peak: Arc<AtomicUsize>,
    bodies: Arc<Mutex<Vec<(String, Value)>>>,
}

async fn handle(State(s): State<Scripted>, uri: axum::http::Uri, body: Bytes) -> (StatusCode, String) {
    let n = s.seen.fetch_add(1, Ordering::SeqCst);
    let now = s.active.fetch_add(1, Ordering::SeqCst) + 1;
    s.peak.fetch_max(now, Ordering::SeqCst);
    s.bodies.lock().unwrap().push((uri.path().to_string(), serde_json::from_slice(&body).unwrap()));
    let (status, text, delay) = (s.script)(n);
    tokio::time::sleep(delay).await;
    s.active.fetch_sub(1, Ordering::SeqCst);
    (status, text)
}

struct Server {
    state: Scripted,
    url: String,
    task: tokio::task::JoinHandle<()>,
}

impl Drop for Server {
    fn drop(&mut self) {
        self.task.abort();
    }
}

async fn scripted(script: impl Fn(usize) -> (StatusCode, String, Duration) + Send + Sync + 'static) -> Server {
    let state = Scripted {
        script: Arc::new(script),
        seen: Arc::default(),
        active: Arc::default(),
        peak: Arc::default(),
        bodies: Arc::default(),
    };
    let app = Router::new()
        .route("/v1/complete", post(handle))
        .route("/v1/score_options", post(handle))
        .with_state(state.clone());
    let listener = tokio::net::TcpListener::bind(common::localhost()).await.unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let task = tokio::spawn(async move {
        axum::serve(listener, app).await.unwrap();
    });
    Server { state, url, task }
}

fn scores_body() -> String {
    json!({"logprobs": {"positive": -0.1, "negative": -2.4}}).to_string()
}

fn client(url: &str, max_in_flight: usize, timeout_ms: u64) -> HttpBackend {
    let mut d = BackendDescriptor::new("m", url);
    d.max_in_flight = max_in_flight;
    d.timeout_ms = timeout_ms;
    HttpBackend::new(d).unwrap().with_retry(RetryPolicy { max_attempts: 3, initial_backoff: Duration::from_millis(10) })
}

fn options() -> Vec<String> {
    vec!["positive".into(), "negative".into()]
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrency_never_exceeds_max_in_flight() {
    let server = scripted(|_| (StatusCode::OK, scores_body(), Duration::from_millis(40))).await;
    let backend = client(&server.url, 4, 5_000);
    let opts = options();
    let calls = (0..40).map(|i| {
        let backend = &backend;
        let opts = &opts;
        async move { backend.score_options(&format!("text {i}"), opts).await }
    });
    for r in join_all(calls).await {
        r.unwrap();
    }
    assert_eq!(server.state.seen.load(Ordering::SeqCst), 40);
    assert_eq!(server.state.peak.load(Ordering::SeqCst), 4);
}

#[tokio::test]
async fn timeout_is_a_transport_error() {
    let server = scripted(|_| (StatusCode::OK, scores_body(), Duration::from_secs(3))).await;
    let backend = client(&server.url, 1, 150).with_retry(RetryPolicy { max_attempts: 1, initial_backoff: Duration::ZERO });
    match backend.score_options("slow", &options()).await {
        Err(BackendError::Transport { model_id, timed_out, .. }) => {
            assert_eq!(model_id, "m");
            assert!(timed_out);
        }
        other => panic!("expected a timeout, got {other:?}"),
    }
}

#[tokio::test]
async fn server_errors_are_retried_with_identical_bodies() {
    let server = scripted(|n| {
        if n < 2 {
            (StatusCode::SERVICE_UNAVAILABLE, "busy".into(), Duration::ZERO)
        } else {
            (StatusCode::OK, json!({"text": " and more."}).to_string(), Duration::ZERO)
        }
    })
    .await;
    let backend = client(&server.url, 2, 5_000);
    let config = GenerationConfig { top_p: 0.9, max_tokens: 16, seed: Some(7) };
    assert_eq!(backend.complete("The film", &config).await.unwrap(), " and more.");
    let bodies = server.state.bodies.lock().unwrap().clone();
    assert_eq!(bodies.len(), 3);
    assert!(bodies.iter().all(|b| *b == bodies[0]));
}

#[tokio::test]
async fn retries_give_up_after_three_attempts() {
    let server = scripted(|_| (StatusCode::TOO_MANY_REQUESTS, "slow down".into(), Duration::ZERO)).await;
    let backend = client(&server.url, 2, 5_000);
    let err = backend.score_options("x", &options()).await.unwrap_err();
    assert!(matches!(err, BackendError::Status { status: 429, .. }));
    assert_eq!(server.state.seen.load(Ordering::SeqCst), 3);
}

#[tokio::test]
async fn client_errors_carry_status_and_body_and_are_not_retried() {
    let server = scripted(|_| (StatusCode::BAD_REQUEST, "{\"error\":\"options must be distinct\"}".into(), Duration::ZERO)).await;
    let backend = client(&server.url, 2, 5_000);
    match backend.score_options("x", &options()).await {
        Err(BackendError::Status { model_id, status, message }) => {
            assert_eq!((model_id.as_str(), status), ("m", 400));
            assert!(message.contains("options must be distinct"), "{message}");
        }
        other => panic!("expected a status error, got {other:?}"),
    }
    assert_eq!(server.state.seen.load(Ordering::SeqCst), 1);
}

#[tokio::test]
async fn request_bodies_match_the_wire_format() {
    let server = scripted(|n| {
        let body = if n == 0 { json!({"text": "!"}).to_string() } else { scores_body() };
        (StatusCode::OK, body, Duration::ZERO)
    })
    .await;
    let backend = client(&server.url, 1, 5_000);
    backend.complete("Hi", &GenerationConfig { top_p: 0.5, max_tokens: 3, seed: Some(11) }).await.unwrap();
    backend.score_options("Q", &options()).await.unwrap();
    backend.complete("Hi", &GenerationConfig { top_p: 1.0, max_tokens: 3, seed: None }).await.unwrap_err();
    let bodies = server.state.bodies.lock().unwrap().clone();
    assert_eq!(bodies[0], ("/v1/complete".into(), json!({"prompt": "Hi", "max_tokens": 3, "top_p": 0.5, "seed": 11})));
    assert_eq!(bodies[1], ("/v1/score_options".into(), json!({"prompt": "Q", "options": ["positive", "negative"]})));
    assert_eq!(bodies[2], ("/v1/complete".into(), json!({"prompt": "Hi", "max_tokens": 3, "top_p": 1.0})));
}

#[tokio::test]
async fn incomplete_or_malformed_responses_are_rejected() {
    let server = scripted(|n| {
        let body = match n {
            0 => json!({"logprobs": {"positive": -0.1}}).to_string(),
            1 => "not json".to_string(),
            _ => json!({"logprobs": {"positive": -0.1, "negative": -1.0, "neutral": -3.0}}).to_string(),
        };
        (StatusCode::OK, body, Duration::ZERO)
    })
    .await;
    let backend = client(&server.url, 1, 5_000);
    for _ in 0..2 {
        let err = backend.score_options("x", &options()).await.unwrap_err();
        assert!(matches!(err, BackendError::InvalidResponse { .. }), "{err:?}");
    }
    // Unrequested options are dropped.
    let scores = backend.score_options("x", &options()).await.unwrap();
    assert_eq!(scores, BTreeMap::from([("negative".to_string(), -1.0), ("positive".to_string(), -0.1)]));
}

#[tokio::test]
async fn preconditions_fail_before_any_request() {
    let server = scripted(|_| (StatusCode::OK, scores_body(), Duration::ZERO)).await;
    let backend = client(&server.url, 1, 5_000);
    let dup = vec!["a".to_string(), "a".to_string()];
    assert!(matches!(backend.score_options("x", &dup).await, Err(BackendError::Precondition(ProtocolError::DuplicateOption(_)))));
    assert!(matches!(backend.score_options("x", &[]).await, Err(BackendError::Precondition(ProtocolError::NoOptions))));
    let bad = GenerationConfig { top_p: 0.0, max_tokens: 5, seed: None };
    assert!(matches!(backend.complete("x", &bad).await, Err(BackendError::Precondition(ProtocolError::TopP(_)))));
    let mut d = BackendDescriptor::new("scorer", &server.url);
    d.kind = BackendKind::OptionScoring;
    let scorer = HttpBackend::new(d).unwrap();
    assert!(matches!(
        scorer.complete("x", &GenerationConfig::default()).await,
        Err(BackendError::Precondition(ProtocolError::Unsupported { .. }))
    ));
    assert_eq!(server.state.seen.load(Ordering::SeqCst), 0);
}

#[tokio::test]
async fn mock_scores_negative_words_as_negative() {
    let (blind, _aware) = common::spawn_mocks().await;
    let backend = HttpBackend::new(BackendDescriptor::new("mock-blind", blind.base_url())).unwrap();
    let spec = TaskSpec::sentiment();
    let p = predict_label_distribution(&backend, &spec, "e1", "This movie is awful").await.unwrap();
    assert!(p.probs["negative"] > p.probs["positive"], "{:?}", p.probs);
    let total: f64 = p.probs.values().sum();
    assert!((total - 1.0).abs() < 1e-9);

    let raw = backend.score_options("The plot is wonderful", &options()).await.unwrap();
    assert_eq!(raw.keys().cloned().collect::<Vec<_>>(), vec!["negative".to_string(), "positive".to_string()]);
    assert!(raw["positive"] > raw["negative"]);
    let neutral: BTreeMap<String, f64> = backend.score_options("A train at night", &options()).await.unwrap();
    assert_eq!(neutral["positive"], neutral["negative"]);
}

#[tokio::test]
async fn mock_completions_are_seeded() {
    let (blind, _aware) = common::spawn_mocks().await;
    let backend = HttpBackend::new(BackendDescriptor::new("mock-blind", blind.base_url())).unwrap();
    let config = GenerationConfig { top_p: 1.0, max_tokens: 8, seed: Some(3) };
    let a = backend.complete("The film was", &config).await.unwrap();
    let b = backend.complete("The film was", &config).await.unwrap();
    assert_eq!(a, b);
    assert!(!a.trim().is_empty());
}
