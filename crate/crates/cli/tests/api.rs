use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::Duration;

use axum::body::{to_bytes, Body};
use axum::http::{header, Request, StatusCode};
use axum::Router;
use bess_agents::embed::{MockEmbedder, MOCK_DIM};
use bess_agents::knowledge::{load_corpus, KnowledgeIndex};
use bess_agents::validate::{validate_bullets, BulletSpec};
use bess_agents::{AgentConfig, FinalAnswer, MockLlm, Orchestrator};
use bess_core::records::RecordStore;
use bess_core::synth::record_store;
use bess_om::api::{self, AppState};
use serde_json::{json, Value};
use tower::ServiceExt;

const BOTH_Q: &str = "Between 2024-10-10 and 2024-11-25, identify the most voltage inconsistent packs and explain the possible mechanisms responsible.";

fn state(store: RecordStore) -> AppState {
    let embedder = Arc::new(MockEmbedder::new(MOCK_DIM));
    let (slices, _) = load_corpus(concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/knowledge")).unwrap();
    let index = KnowledgeIndex::build(slices, &*embedder).unwrap();
    let store = Arc::new(store);
    let orch = Orchestrator {
        llm: Arc::new(MockLlm::new()),
        embedder,
        store: store.clone(),
        index: Arc::new(index),
        config: AgentConfig::default(),
    };
    AppState::new(orch, store, Duration::from_secs(120))
}

fn app() -> Router {
    let store = record_store(9, "2024-10-01".parse().unwrap(), 227, 11);
    api::router(Arc::new(state(store)), &["http://localhost:5173".to_string()])
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, Value) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Value) {
    send(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

fn post_query(body: impl Into<Body>) -> Request<Body> {
    Request::post("/api/query")
        .header(header::CONTENT_TYPE, "application/json")
        .body(body.into())
        .unwrap()
}

async fn ask(app: &Router, q: &str) -> (StatusCode, Value) {
    send(app, post_query(json!({ "question": q }).to_string())).await
}

#[tokio::test]
async fn healthz_reports_counts() {
    let (s, v) = get(&app(), "/api/healthz").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["status"], "ok");
    assert_eq!(v["store"]["entries"], 227);
    assert_eq!(v["store"]["packs"], 9);
    assert_eq!(v["store"]["first_date"], "2024-10-01");
    assert_eq!(v["index"]["slices"], 30);
    assert_eq!(v["provider"]["llm"], "mock");
}

#[tokio::test]
async fn healthz_flags_empty_store() {
    let app = api::router(Arc::new(state(RecordStore::new(9))), &[]);
    let (_, v) = get(&app, "/api/healthz").await;
    assert_eq!(v["status"], "degraded");
}

#[tokio::test]
async fn records_in_range() {
    let (s, v) = get(&app(), "/api/records?from=2024-10-05&to=2024-10-07").await;
    assert_eq!(s, StatusCode::OK);
    let entries = v["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 3);
    assert_eq!(entries[0]["date"], "2024-10-05");
    assert_eq!(entries[0]["operations"][0]["V"][0].as_array().unwrap().len(), 9);
}

#[tokio::test]
async fn records_inverted_range_is_400() {
    let (s, v) = get(&app(), "/api/records?from=2025-01-02&to=2025-01-01").await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert!(v["error"].as_str().unwrap().contains("inverted range"), "{v}");
    assert_eq!(v["stage"], "records");
}

#[tokio::test]
async fn records_bad_date_is_400() {
    let (s, v) = get(&app(), "/api/records?from=2025-02-30").await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert!(v["error"].as_str().unwrap().contains("from"));
}

#[tokio::test]
async fn records_without_range_returns_everything() {
    let (_, v) = get(&app(), "/api/records").await;
    assert_eq!(v["entries"].as_array().unwrap().len(), 227);
    assert_eq!(v["to"], "2025-05-15");
}

#[tokio::test]
async fn search_returns_bodies() {
    let (s, v) = get(&app(), "/api/knowledge/search?q=coolant%20flow%20in%20liquid%20cooled%20modules&k=3").await;
    assert_eq!(s, StatusCode::OK);
    let hits = v["hits"].as_array().unwrap();
    assert_eq!(hits.len(), 3);
    assert_eq!(hits[0]["slice_id"], "thermal-02");
    assert!(hits[0]["body"].as_str().unwrap().contains("coolant"));
    assert!(hits[0]["fused_score"].as_f64().unwrap() >= hits[1]["fused_score"].as_f64().unwrap());
}

#[tokio::test]
async fn search_rejects_bad_parameters() {
    let a = app();
    assert_eq!(get(&a, "/api/knowledge/search?q=x&k=0").await.0, StatusCode::BAD_REQUEST);
    assert_eq!(get(&a, "/api/knowledge/search?q=%20").await.0, StatusCode::BAD_REQUEST);
    assert_eq!(get(&a, "/api/knowledge/search").await.0, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn query_answers_with_valid_bullets() {
    let (s, v) = ask(&app(), BOTH_Q).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["route"], "data_and_knowledge");
    assert_eq!(v["degraded"], false);
    assert_eq!(v["audit"]["bullet_report"]["valid"], true);
    let text: String = v["bullets"]
        .as_array()
        .unwrap()
        .iter()
        .map(|b| format!("- {}\n", b.as_str().unwrap()))
        .collect();
    assert!(validate_bullets(&text, &BulletSpec::synthesis()).valid, "{text}");
    for k in ["route", "data", "knowledge", "synthesize", "total", "request"] {
        assert!(v["timings_ms"][k].is_number(), "{k}");
    }
}

#[tokio::test]
async fn response_carries_the_answer_losslessly() {
    let (_, v) = ask(&app(), BOTH_Q).await;
    let answer: FinalAnswer = serde_json::from_value(v.clone()).unwrap();
    let back = serde_json::to_value(&answer).unwrap();
    for (k, val) in back.as_object().unwrap() {
        assert_eq!(&v[k], val, "{k}");
    }
}

#[tokio::test]
async fn query_errors_are_structured() {
    let a = app();
    let (s, v) = ask(&a, "   ").await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["stage"], "request");
    assert!(v["error"].as_str().unwrap().contains("empty"));
    let (s, v) = send(&a, post_query("{not json")).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["stage"], "request");
    let (s, _) = send(&a, post_query(json!({"q": "x"}).to_string())).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn stage_failures_stay_200_and_degraded() {
    let (s, v) = ask(&app(), "From 2030-01-01 to 2030-02-01, list the worst packs.").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["degraded"], true);
    assert_eq!(v["failures"][0]["kind"], "no_records");
    assert_eq!(v["failures"][0]["stage"], "data");
}

#[tokio::test]
async fn cors_allows_the_console_origin() {
    let req = Request::get("/api/healthz")
        .header(header::ORIGIN, "http://localhost:5173")
        .body(Body::empty())
        .unwrap();
    let resp = app().oneshot(req).await.unwrap();
    assert_eq!(
        resp.headers().get(header::ACCESS_CONTROL_ALLOW_ORIGIN).unwrap(),
        "http://localhost:5173"
    );
    let req = Request::get("/api/healthz")
        .header(header::ORIGIN, "http://evil.example")
        .body(Body::empty())
        .unwrap();
    let resp = app().oneshot(req).await.unwrap();
    assert!(resp.headers().get(header::ACCESS_CONTROL_ALLOW_ORIGIN).is_none());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_queries_do_not_cross_talk() {
    let a = app();
    let questions: Vec<String> = serde_json::from_str::<Vec<Value>>(
        &std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/eval/routing.json")).unwrap(),
    )
    .unwrap()
    .into_iter()
    .map(|c| c["question"].as_str().unwrap().to_string())
    .collect();
    let tasks: Vec<_> = questions
        .iter()
        .take(24)
        .cloned()
        .map(|q| {
            let a = a.clone();
            tokio::spawn(async move { (q.clone(), ask(&a, &q).await) })
        })
        .collect();
    for t in tasks {
        let (q, (s, v)) = t.await.unwrap();
        assert_eq!(s, StatusCode::OK);
        assert_eq!(v["question"], q.as_str());
        assert_eq!(v["audit"]["exchanges"][0]["user"], q.as_str());
    }
}

#[tokio::test]
async fn audit_log_gets_one_line_per_answer() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("audit.jsonl");
    let store = record_store(9, "2024-10-01".parse().unwrap(), 60, 11);
    let st = state(store).with_audit_log(&path).unwrap();
    let a = api::router(Arc::new(st), &[]);
    ask(&a, BOTH_Q).await;
    ask(&a, "How to prevent thermal inconsistency in BESS?").await;
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[1]["answer"]["route"], "knowledge_only");
}

/// Every key path with its JSON type; arrays contribute their elements.
fn shape(v: &Value, path: &str, out: &mut BTreeSet<String>) {
    let kind = match v {
        Value::Null => "null",
        Value::Bool(_) => "bool",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    };
    out.insert(format!("{path}: {kind}"));
    match v {
        Value::Object(m) => {
            for (k, x) in m {
                // timing keys are data, not schema
                if path.ends_with("timings_ms") {
                    continue;
                }
                shape(x, &format!("{path}.{k}"), out);
            }
        }
        Value::Array(xs) => {
            for x in xs {
                shape(x, &format!("{path}[]"), out);
            }
        }
        _ => {}
    }
}

async fn check_golden(name: &str, v: &Value) {
    let mut s = BTreeSet::new();
    shape(v, "$", &mut s);
    let got: String = s.into_iter().map(|l| l + "\n").collect();
    let path = format!("{}/tests/golden/{name}.shape", env!("CARGO_MANIFEST_DIR"));
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, &got).unwrap();
    }
    let want = std::fs::read_to_string(&path).unwrap_or_else(|_| panic!("missing {path}; run with UPDATE_GOLDEN=1"));
    assert_eq!(got, want, "{name} schema changed");
}

#[tokio::test]
async fn response_schemas_match_golden() {
    let a = app();
    check_golden("query_both", &ask(&a, BOTH_Q).await.1).await;
    check_golden("query_knowledge", &ask(&a, "How to prevent thermal inconsistency in BESS?").await.1).await;
    check_golden("records", &get(&a, "/api/records?from=2024-10-05&to=2024-10-06").await.1).await;
    check_golden("search", &get(&a, "/api/knowledge/search?q=balancing&k=2").await.1).await;
    check_golden("healthz", &get(&a, "/api/healthz").await.1).await;
}
