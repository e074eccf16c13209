mod common;

use std::path::Path;
use std::time::Duration;

use reqwest::StatusCode;
use serde_json::{json, Value};

use syntheval::backend::HttpBackend;
use syntheval::cli::run_captured;
use syntheval::core::divergence::DivergenceRecord;
use syntheval::core::ngram::NgramStat;
use syntheval::core::protocol::BackendDescriptor;
use syntheval::core::verify::TemplateResult;
use syntheval::mock_server::RunningMock;
use syntheval::service::{self, AppState, HardExample, JobState, JobView, Preview, ServiceConfig};
use syntheval::store::{load_records, read_json, Clock, SynthExample, Workspace};
use syntheval::workflow::PromptMode;

struct Service {
    url: String,
    http: reqwest::Client,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
    task: Option<tokio::task::JoinHandle<std::io::Result<()>>>,
}

impl Service {
    async fn start(root: &Path, run_id: &str, mocks: &[&RunningMock]) -> Self {
        let backends = mocks
            .iter()
            .zip(["mock-blind", "mock-aware"])
            .map(|(m, id)| HttpBackend::new(BackendDescriptor::new(id, m.base_url())).unwrap())
            .collect();
        let config = ServiceConfig {
            ws: Workspace::new(root),
            run_id: run_id.into(),
            clock: Clock::Zero,
            prompt_mode: PromptMode::Fewshot,
            max_in_flight: 8,
            job_workers: 2,
        };
        let listener = tokio::net::TcpListener::bind(common::localhost()).await.unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let task = tokio::spawn(service::serve(listener, AppState::new(config, backends), async {
            let _ = rx.await;
        }));
        Self { url, http: reqwest::Client::new(), stop: Some(tx), task: Some(task) }
    }

    async fn get(&self, path: &str) -> (StatusCode, Value) {
        let resp = self.http.get(format!("{}{path}", self.url)).send().await.unwrap();
        let status = resp.status();
        let body = resp.text().await.unwrap();
        (status, if body.is_empty() { Value::Null } else { serde_json::from_str(&body).unwrap_or(Value::String(body)) })
    }

    async fn send(&self, method: reqwest::Method, path: &str, body: Option<Value>) -> (StatusCode, Value) {
        let mut req = self.http.request(method, format!("{}{path}", self.url));
        if let Some(b) = body {
            req = req.json(&b);
        }
        let resp = req.send().await.unwrap();
        let status = resp.status();
        let text = resp.text().await.unwrap();
        (status, if text.is_empty() { Value::Null } else { serde_json::from_str(&text).unwrap() })
    }

    async fn wait_for(&self, job_id: &str) -> JobView {
        for _ in 0..600 {
            let (status, body) = self.get(&format!("/api/jobs/{job_id}")).await;
            assert_eq!(status, StatusCode::OK);
            let view: JobView = serde_json::from_value(body).unwrap();
            if matches!(view.state, JobState::Done | JobState::Failed) {
                return view;
            }
            tokio::time::sleep(Duration::from_millis(50)).await;
        }
        panic!("job {job_id} did not finish");
    }

    async fn shutdown(mut self) {
        let _ = self.stop.take().unwrap().send(());
        self.task.take().unwrap().await.unwrap().unwrap();
    }
}

fn template_body(name: &str, pattern: &str) -> Value {
    json!({
        "name": name,
        "task": "sentiment",
        "test_type": "Negation",
        "pattern": pattern,
        "gold_label": "negative",
        "lexicons": {"NOUN": "NOUN", "POS_ADJ": "POS_ADJ"}
    })
}

#[tokio::test]
async fn empty_workspace_lists_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let svc = Service::start(dir.path(), "r", &[]).await;
    assert_eq!(svc.get("/api/templates").await, (StatusCode::OK, json!([])));
    assert_eq!(svc.get("/api/lexicons").await, (StatusCode::OK, json!([])));
    assert_eq!(svc.get("/api/results").await, (StatusCode::OK, json!([])));
    assert_eq!(svc.get("/api/jobs").await, (StatusCode::OK, json!([])));
    let (status, body) = svc.get("/api/templates/nope").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert!(body["error"].is_string());
    svc.shutdown().await;
}

#[tokio::test]
async fn template_crud() {
    let ws = common::workbench();
    let svc = Service::start(ws.path(), "r", &[]).await;
    let (_, list) = svc.get("/api/templates").await;
    assert_eq!(list.as_array().unwrap().len(), 10);
    assert_eq!(list[0]["name"], "affirmative_pos");
    let (_, page) = svc.get("/api/templates?offset=2&limit=3").await;
    assert_eq!(page.as_array().unwrap().len(), 3);
    assert_eq!(page[0], list[2]);

    let draft = template_body("mine", "My {NOUN} is not {POS_ADJ}.");
    let (status, created) = svc.send(reqwest::Method::POST, "/api/templates", Some(draft.clone())).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(created["pattern"], "My {NOUN} is not {POS_ADJ}.");
    let (status, _) = svc.send(reqwest::Method::POST, "/api/templates", Some(draft.clone())).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(svc.get("/api/templates/mine").await.1, created);

    let renamed = template_body("mine2", "Your {NOUN} is not {POS_ADJ}.");
    let (status, _) = svc.send(reqwest::Method::PUT, "/api/templates/mine", Some(renamed)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(svc.get("/api/templates/mine").await.0, StatusCode::NOT_FOUND);
    assert_eq!(svc.get("/api/templates/mine2").await.1["pattern"], "Your {NOUN} is not {POS_ADJ}.");

    let bad = template_body("bad", "This {NOUN is broken");
    let (status, body) = svc.send(reqwest::Method::POST, "/api/templates", Some(bad)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(body["error"].as_str().unwrap().contains("unclosed brace"), "{body}");

    let (status, _) = svc.send(reqwest::Method::DELETE, "/api/templates/mine2", None).await;
    assert_eq!(status, StatusCode::NO_CONTENT);
    assert_eq!(svc.send(reqwest::Method::DELETE, "/api/templates/mine2", None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(svc.get("/api/templates").await.1.as_array().unwrap().len(), 10);
    svc.shutdown().await;
}

#[tokio::test]
async fn preview_and_lexicons() {
    let ws = common::workbench();
    let svc = Service::start(ws.path(), "r", &[]).await;
    let (status, body) = svc.send(reqwest::Method::POST, "/api/templates/negation1/preview", None).await;
    assert_eq!(status, StatusCode::OK);
    let preview: Preview = serde_json::from_value(body).unwrap();
    assert_eq!(preview.count, 1411);
    assert_eq!(preview.sample_cases.len(), 50);
    assert_eq!(preview.sample_cases[0].case_index, 0);
    assert!(preview.sample_cases.iter().all(|c| c.text.starts_with("This ") && c.text.contains(" is not ")));

    let mut draft = template_body("negation1", "{NOUN}!");
    draft["lexicons"] = json!({"NOUN": "NOUN"});
    let (_, body) = svc.send(reqwest::Method::POST, "/api/templates/negation1/preview", Some(draft)).await;
    let preview: Preview = serde_json::from_value(body).unwrap();
    assert_eq!(preview.count, 83);

    let (_, lexicons) = svc.get("/api/lexicons").await;
    assert_eq!(lexicons[2], json!({"name": "NOUN", "size": 83}));
    let (_, noun) = svc.get("/api/lexicons/NOUN").await;
    assert_eq!(noun["entries"].as_array().unwrap().len(), 83);
    assert_eq!(svc.get("/api/lexicons/NOPE").await.0, StatusCode::NOT_FOUND);
    svc.shutdown().await;
}

#[tokio::test]
async fn verify_job_runs_to_completion() {
    let ws = common::workbench();
    let (blind, aware) = common::spawn_mocks().await;
    let svc = Service::start(ws.path(), "r", &[&blind, &aware]).await;

    let req = json!({"template": "negation1_pos", "model_id": "mock-blind"});
    let (status, body) = svc.send(reqwest::Method::POST, "/api/verify", Some(req)).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    let job_id = body["job_id"].as_str().unwrap().to_string();
    let view = svc.wait_for(&job_id).await;
    assert_eq!(view.state, JobState::Done, "{view:?}");
    assert_eq!((view.progress.completed, view.progress.total), (2988, 2988));
    assert_eq!(view.accuracy_pct, Some(0.0));
    let path = view.result_path.unwrap();
    assert_eq!(path, "runs/r/verify/negation1_pos__mock-blind.json");
    let result: TemplateResult = read_json(ws.path().join(&path)).unwrap();
    assert_eq!((result.n_cases, result.n_correct), (2988, 0));

    let (_, results) = svc.get("/api/results?template=negation1_pos&model=mock-blind").await;
    assert_eq!(results.as_array().unwrap().len(), 1);
    assert_eq!(results[0]["accuracy_pct"], json!(0.0));
    assert_eq!(svc.get("/api/results?model=mock-aware").await.1, json!([]));

    let unknown = json!({"template": "negation1_pos", "model_id": "nobody"});
    assert_eq!(svc.send(reqwest::Method::POST, "/api/verify", Some(unknown)).await.0, StatusCode::BAD_REQUEST);
    let missing = json!({"template": "nope", "model_id": "mock-blind"});
    assert_eq!(svc.send(reqwest::Method::POST, "/api/verify", Some(missing)).await.0, StatusCode::NOT_FOUND);
    svc.shutdown().await;
}

/// Runs the mining stages through the CLI against live mocks.
fn mine(root: &str, mocks: &common::BackgroundMocks, n: &str, k: &str) {
    let base = ["--run-dir", root, "--run-id", "m", "--deterministic", "--seed", "7"];
    let with = |rest: &[&str]| {
        let mut v: Vec<&str> = base.to_vec();
        v.extend_from_slice(rest);
        run_captured(common::args(v)).unwrap();
    };
    let blind = mocks.blind.base_url();
    let aware = mocks.aware.base_url();
    with(&["sample-queries", "--corpus", "corpus/reviews_500.txt", "--n", n]);
    with(&["--backend-url", &blind, "--model-id", "mock-blind", "generate", "--max-tokens", "12"]);
    with(&["--backend-url", &blind, "--model-id", "mock-blind", "predict"]);
    with(&["--backend-url", &aware, "--model-id", "mock-aware", "predict"]);
    with(&["rank", "--task-preds", "runs/m/predict/mock-blind.jsonl", "--ref-preds", "runs/m/predict/mock-aware.jsonl", "--k", k]);
}

#[test]
fn hard_examples_follow_the_ranking() {
    let ws = common::workbench();
    let root = ws.path().to_str().unwrap();
    let mocks = common::BackgroundMocks::start();
    mine(root, &mocks, "120", "40");

    let rt = tokio::runtime::Runtime::new().unwrap();
    rt.block_on(async {
        let svc = Service::start(ws.path(), "m", &[]).await;
        let (status, body) = svc.get("/api/hard-examples").await;
        assert_eq!(status, StatusCode::OK);
        let hard: Vec<HardExample> = serde_json::from_value(body).unwrap();
        let ranked: Vec<DivergenceRecord> = load_records(ws.path().join("runs/m/rank/ranked.jsonl")).unwrap();
        let dataset: Vec<SynthExample> = load_records(ws.path().join("runs/m/generate/dataset.jsonl")).unwrap();
        assert_eq!(hard.len(), 40);
        for (i, (h, r)) in hard.iter().zip(&ranked).enumerate() {
            assert_eq!(&h.record, r);
            assert_eq!(h.record.rank, i + 1);
            let text = &dataset.iter().find(|e| e.id == r.example_id).unwrap().text;
            assert_eq!(&h.text, text);
            assert!(h.task_probs.is_some() && h.ref_probs.is_some());
        }
        assert!(hard.windows(2).all(|w| w[0].record.score >= w[1].record.score));

        let (_, page) = svc.get("/api/hard-examples?offset=10&limit=5").await;
        let page: Vec<HardExample> = serde_json::from_value(page).unwrap();
        assert_eq!(page.iter().map(|h| h.record.rank).collect::<Vec<_>>(), vec![11, 12, 13, 14, 15]);

        let (_, stats) = svc.get("/api/ngrams?n_min=2&n_max=3&min_count=2").await;
        let stats: Vec<NgramStat> = serde_json::from_value(stats).unwrap();
        assert!(!stats.is_empty());
        for s in stats.iter().take(10) {
            let q = s.ngram.join("%20");
            let (_, cluster) = svc.get(&format!("/api/ngrams/cluster?ngram={q}")).await;
            assert_eq!(cluster["example_ids"].as_array().unwrap().len(), s.count, "{:?}", s.ngram);
        }
        assert_eq!(svc.get("/api/hard-examples?run=missing").await.0, StatusCode::NOT_FOUND);
        assert_eq!(svc.get("/api/ngrams?n_min=3&n_max=2").await.0, StatusCode::BAD_REQUEST);
        svc.shutdown().await;
    });
}

#[test]
fn service_and_cli_verify_agree() {
    let ws = common::workbench();
    let root = ws.path().to_str().unwrap();
    let mocks = common::BackgroundMocks::start();
    let blind = mocks.blind.base_url();
    let out = run_captured(common::args([
        "--run-dir", root, "--run-id", "cli", "--deterministic", "--backend-url", &blind, "--model-id", "mock-blind",
        "verify", "--template", "negation1",
    ]))
    .unwrap();
    assert!(out.contains("negation1 / mock-blind"), "{out}");
    let cli_json = std::fs::read(ws.path().join("runs/cli/verify/negation1__mock-blind.json")).unwrap();

    let rt = tokio::runtime::Runtime::new().unwrap();
    let svc_json = rt.block_on(async {
        let svc = Service::start(ws.path(), "svc", &[&mocks.blind, &mocks.aware]).await;
        let req = json!({"template": "negation1", "model_id": "mock-blind"});
        let (_, body) = svc.send(reqwest::Method::POST, "/api/verify", Some(req)).await;
        let view = svc.wait_for(body["job_id"].as_str().unwrap()).await;
        assert_eq!(view.state, JobState::Done);
        svc.shutdown().await;
        std::fs::read(ws.path().join(view.result_path.unwrap())).unwrap()
    });
    assert_eq!(cli_json, svc_json);
}
