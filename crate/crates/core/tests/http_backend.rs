mod common;

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use agavqa_core::Dimension;
use agavqa_core::harness::{EvalOptions, HarnessError, build_pair_questions, evaluate_pair_multi_input};
use agavqa_core::scorer::{BackendError, Capability, HttpBackend, HttpConfig, ScoringBackend};
use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use common::fixtures;
use serde_json::{Value, json};

#[derive(Default)]
struct Stub {
    caps: Value,
    /// Requests to answer with 503 before behaving.
    failures_left: AtomicUsize,
    status_override: Option<u16>,
    choose_index: usize,
    malformed: bool,
    calls: Mutex<HashMap<String, usize>>,
    in_flight: AtomicUsize,
    peak: AtomicUsize,
    last_body: Mutex<Value>,
}

impl Stub {
    fn new(caps: Value) -> Self {
        Self { caps, choose_index: 1, ..Self::default() }
    }

    fn calls(&self, path: &str) -> usize {
        self.calls.lock().unwrap().get(path).copied().unwrap_or(0)
    }
}

type Reply = (StatusCode, Json<Value>);

async fn handle(stub: &Stub, path: &str, body: Value, ok: Value) -> Reply {
    *stub.calls.lock().unwrap().entry(path.into()).or_default() += 1;
    *stub.last_body.lock().unwrap() = body;
    let now = stub.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    stub.peak.fetch_max(now, Ordering::SeqCst);
    tokio::time::sleep(Duration::from_millis(15)).await;
    stub.in_flight.fetch_sub(1, Ordering::SeqCst);
    if stub
        .failures_left
        .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
        .is_ok()
    {
        return (StatusCode::SERVICE_UNAVAILABLE, Json(json!({"error": "busy"})));
    }
    if let Some(code) = stub.status_override {
        return (StatusCode::from_u16(code).unwrap(), Json(json!({"error": "nope"})));
    }
    if stub.malformed {
        return (StatusCode::OK, Json(json!({"unexpected": true})));
    }
    (StatusCode::OK, Json(ok))
}

async fn caps(State(s): State<Arc<Stub>>) -> Json<Value> {
    Json(s.caps.clone())
}

async fn score(State(s): State<Arc<Stub>>, Json(body): Json<Value>) -> Reply {
    handle(&s, "score", body, json!({"audio_quality": 61.5, "consistency": 40.0, "overall": 55.25})).await
}

async fn levels(State(s): State<Arc<Stub>>, Json(body): Json<Value>) -> Reply {
    let ok = json!({"logits": {"excellent": 0.0, "good": 0.0, "fair": 0.0, "poor": 0.0, "bad": 0.0}});
    handle(&s, "level_logits", body, ok).await
}

async fn choose(State(s): State<Arc<Stub>>, Json(body): Json<Value>) -> Reply {
    let index = s.choose_index;
    handle(&s, "choose", body, json!({"selected_index": index})).await
}

struct Running {
    url: String,
    _rt: tokio::runtime::Runtime,
}

fn start(stub: Arc<Stub>) -> Running {
    let rt = tokio::runtime::Runtime::new().unwrap();
    let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let app = Router::new()
        .route("/capabilities", get(caps))
        .route("/score", post(score))
        .route("/level_logits", post(levels))
        .route("/choose", post(choose))
        .with_state(stub);
    rt.spawn(async move { axum::serve(listener, app).await.unwrap() });
    Running { url, _rt: rt }
}

fn config(url: &str) -> HttpConfig {
    let mut c = HttpConfig::new(url);
    c.backoff = Duration::from_millis(5);
    c.timeout = Duration::from_secs(5);
    c
}

fn all_caps() -> Value {
    json!({"triple": true, "levels": true, "choice": true})
}

#[test]
fn triple_only_backend_refuses_choice_without_asking() {
    let stub = Arc::new(Stub::new(json!({"triple": true, "levels": false, "choice": false})));
    let server = start(stub.clone());
    let backend = HttpBackend::connect(config(&server.url)).unwrap();
    let groups = fixtures::pair_groups(3, 1);
    let questions = build_pair_questions(&groups, 1).unwrap();
    let err = evaluate_pair_multi_input(&backend, &groups, &questions, &EvalOptions::default()).unwrap_err();
    assert!(matches!(
        err,
        HarnessError::Backend(BackendError::Unsupported { capability: Capability::MultiInputChoice, .. })
    ));
    let item = &groups[0].items[0];
    assert!(matches!(backend.choose(&item.video_uri, &[item]), Err(BackendError::Unsupported { .. })));
    assert_eq!(stub.calls("choose"), 0);
}

#[test]
fn score_fixture_and_wire_body() {
    let stub = Arc::new(Stub::new(all_caps()));
    let server = start(stub.clone());
    let backend = HttpBackend::connect(config(&server.url)).unwrap();
    let item = &fixtures::scored_items(1, 1, 0)[0];
    let t = backend.score(item).unwrap();
    assert_eq!((t.audio_quality, t.consistency, t.overall), (61.5, 40.0, 55.25));
    assert_eq!(
        *stub.last_body.lock().unwrap(),
        json!({"item_id": item.id, "video_uri": item.video_uri, "audio_uri": item.audio_uri})
    );
    let l = backend.level_logits(item, Dimension::Consistency).unwrap();
    assert_eq!(l.score(), 3.0);
    assert_eq!(stub.last_body.lock().unwrap()["dimension"], "consistency");
}

#[test]
fn two_failures_then_success_records_two_retries() {
    let stub = Arc::new(Stub::new(all_caps()));
    stub.failures_left.store(2, Ordering::SeqCst);
    let server = start(stub.clone());
    let mut cfg = config(&server.url);
    cfg.max_retries = 3;
    let backend = HttpBackend::connect(cfg).unwrap();
    let item = &fixtures::scored_items(1, 1, 0)[0];
    assert!(backend.score(item).is_ok());
    assert_eq!(backend.retries(), 2);
    assert_eq!(stub.calls("score"), 3);
}

#[test]
fn exhausted_retries_are_transport_errors() {
    let stub = Arc::new(Stub::new(all_caps()));
    stub.failures_left.store(100, Ordering::SeqCst);
    let server = start(stub.clone());
    let mut cfg = config(&server.url);
    cfg.max_retries = 2;
    let backend = HttpBackend::connect(cfg).unwrap();
    let item = &fixtures::scored_items(1, 1, 0)[0];
    assert!(matches!(backend.score(item), Err(BackendError::Transport { attempts: 3, .. })));
}

#[test]
fn out_of_range_choice_is_a_protocol_violation() {
    let mut stub = Stub::new(all_caps());
    stub.choose_index = 5;
    let stub = Arc::new(stub);
    let server = start(stub);
    let backend = HttpBackend::connect(config(&server.url)).unwrap();
    let groups = fixtures::pair_groups(1, 0);
    let cands: Vec<_> = groups[0].items.iter().take(3).collect();
    let err = backend.choose(&groups[0].items[0].video_uri, &cands).unwrap_err();
    assert!(err.is_protocol_violation(), "{err}");

    let questions = build_pair_questions(&groups, 0).unwrap();
    let r = evaluate_pair_multi_input(&backend, &groups, &questions, &EvalOptions::default()).unwrap();
    assert_eq!(r.violations, r.total);
    assert_eq!(r.correct, 0);
}

#[test]
fn client_errors_and_bad_bodies() {
    let mut stub = Stub::new(all_caps());
    stub.status_override = Some(400);
    let server = start(Arc::new(stub));
    let backend = HttpBackend::connect(config(&server.url)).unwrap();
    let item = &fixtures::scored_items(1, 1, 0)[0];
    assert!(matches!(backend.score(item), Err(BackendError::Rejected { status: 400, .. })));
    assert_eq!(backend.retries(), 0);

    let mut stub = Stub::new(all_caps());
    stub.malformed = true;
    let server = start(Arc::new(stub));
    let backend = HttpBackend::connect(config(&server.url)).unwrap();
    assert!(backend.score(item).unwrap_err().is_protocol_violation());
}

#[test]
fn in_flight_requests_are_bounded() {
    let stub = Arc::new(Stub::new(all_caps()));
    let server = start(stub.clone());
    let mut cfg = config(&server.url);
    cfg.max_in_flight = 2;
    let backend = HttpBackend::connect(cfg).unwrap();
    let items = fixtures::scored_items(24, 1, 0);
    std::thread::scope(|s| {
        for chunk in items.chunks(3) {
            let backend = &backend;
            s.spawn(move || {
                for it in chunk {
                    backend.score(it).unwrap();
                }
            });
        }
    });
    assert_eq!(stub.calls("score"), 24);
    assert!(stub.peak.load(Ordering::SeqCst) <= 2);
    assert_eq!(backend.requests(), 25);
}

#[test]
fn unreachable_remote_fails_at_connect() {
    let mut cfg = config("http://127.0.0.1:9");
    cfg.max_retries = 0;
    assert!(matches!(HttpBackend::connect(cfg), Err(BackendError::Transport { .. })));
}
