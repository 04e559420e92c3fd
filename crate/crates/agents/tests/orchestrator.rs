use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use bess_agents::data_agent::RecordSource;
use bess_agents::embed::{EmbedError, Embedder, MockEmbedder, MOCK_DIM};
use bess_agents::knowledge::{load_corpus, KnowledgeIndex};
use bess_agents::llm::{LlmClient, RecordingLlm, ScriptedLlm, Stage};
use bess_agents::{AgentConfig, ErrorKind, MockLlm, Orchestrator, Route};
use bess_core::records::{RecordEntry, RecordError, RecordStore};
use bess_core::synth::record_store;
use chrono::NaiveDate;

struct CountingEmbedder {
    inner: MockEmbedder,
    calls: AtomicUsize,
}

impl Embedder for CountingEmbedder {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn fingerprint(&self) -> String {
        self.inner.fingerprint()
    }
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.embed(texts)
    }
}

struct CountingStore {
    inner: RecordStore,
    reads: AtomicUsize,
}

impl RecordSource for CountingStore {
    fn date_bounds(&self) -> Option<(NaiveDate, NaiveDate)> {
        self.reads.fetch_add(1, Ordering::SeqCst);
        self.inner.date_bounds()
    }
    fn entries_between(&self, from: NaiveDate, to: NaiveDate) -> Result<Vec<RecordEntry>, RecordError> {
        self.reads.fetch_add(1, Ordering::SeqCst);
        self.inner.entries_between(from, to)
    }
}

fn date(s: &str) -> NaiveDate {
    s.parse().unwrap()
}

fn demo_store() -> RecordStore {
    record_store(9, date("2024-10-01"), 227, 11)
}

fn index(e: &dyn Embedder) -> KnowledgeIndex {
    let (slices, _) = load_corpus(concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/knowledge")).unwrap();
    KnowledgeIndex::build(slices, e).unwrap()
}

struct Rig {
    llm: Arc<RecordingLlm<Box<dyn LlmClient>>>,
    embedder: Arc<CountingEmbedder>,
    store: Arc<CountingStore>,
    orch: Orchestrator,
}

fn rig_with(llm: Box<dyn LlmClient>, store: RecordStore, empty_index: bool) -> Rig {
    let llm = Arc::new(RecordingLlm::new(llm));
    let embedder = Arc::new(CountingEmbedder {
        inner: MockEmbedder::new(MOCK_DIM),
        calls: AtomicUsize::new(0),
    });
    let idx = if empty_index {
        KnowledgeIndex::empty(&*embedder)
    } else {
        index(&*embedder)
    };
    embedder.calls.store(0, Ordering::SeqCst);
    let store = Arc::new(CountingStore {
        inner: store,
        reads: AtomicUsize::new(0),
    });
    let orch = Orchestrator {
        llm: llm.clone(),
        embedder: embedder.clone(),
        store: store.clone(),
        index: Arc::new(idx),
        config: AgentConfig::default(),
    };
    Rig {
        llm,
        embedder,
        store,
        orch,
    }
}

fn rig() -> Rig {
    rig_with(Box::new(MockLlm::new()), demo_store(), false)
}

const DATA_Q: &str = "From 2024-10-01 to 2024-12-30, please list the days with the highest voltage spread of all packs.";
const KNOW_Q: &str = "What are the main mechanisms causing voltage inconsistency in large-scale ESS battery packs?";
const BOTH_Q: &str = "Between 2024-10-10 and 2024-11-25, identify the most voltage inconsistent packs and explain the possible mechanisms responsible.";

#[test]
fn data_only_never_touches_knowledge() {
    let r = rig();
    let a = r.orch.answer(DATA_Q).unwrap();
    assert_eq!(a.route, Route::DataOnly);
    assert_eq!(r.llm.stages(), vec![Stage::Route, Stage::Data]);
    assert_eq!(r.embedder.calls.load(Ordering::SeqCst), 0);
    assert!(a.audit.knowledge_output.is_none() && a.audit.retrieval_hits.is_none());
    assert!(!a.degraded, "{:?}", a.failures);
    assert!((3..=5).contains(&a.bullets.len()));
    let d = a.audit.data_output.unwrap();
    assert_eq!((d.date_from, d.date_to), (date("2024-10-01"), date("2024-12-30")));
    assert_eq!(d.dates.len(), 91);
}

#[test]
fn knowledge_only_never_reads_records() {
    let r = rig();
    let a = r.orch.answer(KNOW_Q).unwrap();
    assert_eq!(a.route, Route::KnowledgeOnly);
    assert_eq!(r.store.reads.load(Ordering::SeqCst), 0);
    assert_eq!(r.llm.count(Stage::Data), 0);
    assert_eq!(r.llm.count(Stage::Synthesize), 0);
    for s in [Stage::Expand, Stage::Expert, Stage::Integrate] {
        assert_eq!(r.llm.count(s), 1, "{s}");
    }
    assert_eq!(r.embedder.calls.load(Ordering::SeqCst), 1);
    let hits = a.audit.retrieval_hits.as_ref().unwrap();
    assert_eq!(hits.len(), 5);
    assert!(a.audit.bullet_report.valid, "{:?}", a.audit.bullet_report);
    assert!(!a.degraded);
}

#[test]
fn both_branches_then_synthesis() {
    let r = rig();
    let a = r.orch.answer(BOTH_Q).unwrap();
    assert_eq!(a.route, Route::DataAndKnowledge);
    assert_eq!(r.llm.count(Stage::Synthesize), 1);
    assert_eq!(r.llm.count(Stage::Data), 1);
    assert!(a.audit.synthesis.is_some());
    assert!(a.audit.bullet_report.valid, "{:?}", a.audit.bullet_report);
    assert!(!a.degraded, "{:?}", a.failures);
    // synthesis sees both branch outputs
    let synth = r.llm.calls().into_iter().find(|c| c.stage == Stage::Synthesize).unwrap();
    assert!(synth.user.contains("data_brief") && synth.user.contains("relevance"));
    // merged log order does not depend on thread timing
    let stages: Vec<Stage> = a.audit.exchanges.iter().map(|e| e.stage).collect();
    assert_eq!(
        stages,
        vec![Stage::Route, Stage::Data, Stage::Expand, Stage::Expert, Stage::Integrate, Stage::Synthesize]
    );
    for key in ["route", "data", "knowledge", "synthesize", "total"] {
        assert!(a.audit.timings_ms.contains_key(key), "{key}");
    }
}

#[test]
fn runs_are_byte_identical() {
    let one = rig().orch.answer(BOTH_Q).unwrap();
    let two = rig().orch.answer(BOTH_Q).unwrap();
    assert_eq!(one.deterministic_json(), two.deterministic_json());
    assert!(!one.deterministic_json().contains("timings_ms\": {\n"));
}

#[test]
fn temperature_is_zero_everywhere() {
    let r = rig();
    r.orch.answer(BOTH_Q).unwrap();
    assert!(r.llm.calls().iter().all(|c| c.temperature == 0.0));
}

#[test]
fn empty_index_forces_low_relevance() {
    let r = rig_with(Box::new(MockLlm::new()), demo_store(), true);
    let a = r.orch.answer(KNOW_Q).unwrap();
    let k = a.audit.knowledge_output.unwrap();
    assert_eq!(k.relevance, bess_agents::knowledge_agent::Relevance::Low);
    assert_eq!(k.policy, "reasoning-centric");
    assert!(a.degraded);
    assert!(k.problems.iter().any(|p| p.contains("empty")));
    assert_eq!(r.embedder.calls.load(Ordering::SeqCst), 0);
}

#[test]
fn overlong_brief_gets_one_repair_then_degrades() {
    let seven = (1..=7).map(|i| format!("- Pack {i} looks fine.")).collect::<Vec<_>>().join("\n");
    let reply = serde_json::json!({"data_analysis": "x", "data_summary": "y", "data_brief": seven}).to_string();
    let llm = ScriptedLlm::with_fallback(MockLlm::new())
        .reply(Stage::Data, reply.clone())
        .reply(Stage::Data, reply);
    let r = rig_with(Box::new(llm), demo_store(), false);
    let a = r.orch.answer(DATA_Q).unwrap();
    assert_eq!(r.llm.count(Stage::Data), 2);
    let retry = &r.llm.calls()[2];
    assert!(retry.user.contains("Return only the single JSON object"), "{}", retry.user);
    assert!(a.degraded);
    assert_eq!(a.bullets.len(), 7);
    assert!(!a.audit.bullet_report.valid);
}

#[test]
fn fenced_json_is_repaired() {
    let fenced = format!("```json\n{}\n```", MockLlm::new().chat(&bess_agents::ChatRequest::new(Stage::Route, "", KNOW_Q)).unwrap());
    let llm = ScriptedLlm::with_fallback(MockLlm::new()).reply(Stage::Route, fenced);
    let r = rig_with(Box::new(llm), demo_store(), false);
    let a = r.orch.answer(KNOW_Q).unwrap();
    assert_eq!(r.llm.count(Stage::Route), 2);
    assert_eq!(a.route, Route::KnowledgeOnly);
    assert_eq!(a.audit.router_output.knowledge_query, KNOW_Q);
    assert!(!a.degraded);
    let retry = &a.audit.exchanges[1];
    assert_eq!((retry.stage, retry.attempt), (Stage::Route, 2));
    assert!(retry.user.contains("code fence"), "{}", retry.user);
}

#[test]
fn range_without_records_is_reported() {
    let r = rig();
    let a = r.orch.answer("From 2030-01-01 to 2030-02-01, list the worst packs.").unwrap();
    assert_eq!(a.route, Route::DataOnly);
    assert!(a.degraded);
    assert_eq!(a.failures[0].kind, ErrorKind::NoRecords);
    assert!(a.bullets.is_empty());
}

#[test]
fn inverted_range_is_invalid_input() {
    let r = rig();
    let a = r.orch.answer("From 2025-03-01 to 2025-01-01, list the worst packs.").unwrap();
    assert_eq!(a.failures[0].kind, ErrorKind::InvalidInput);
    assert_eq!(r.llm.count(Stage::Data), 0);
}

#[test]
fn empty_store_is_no_records() {
    let r = rig_with(Box::new(MockLlm::new()), RecordStore::new(9), false);
    let a = r.orch.answer(DATA_Q).unwrap();
    assert_eq!(a.failures[0].kind, ErrorKind::NoRecords);
}

#[test]
fn undated_data_question_uses_last_thirty_days() {
    let r = rig();
    let a = r.orch.answer("Which pack in the records has the worst voltage spread, and why?").unwrap();
    let d = a.audit.data_output.unwrap();
    assert!(d.default_window);
    assert_eq!(d.date_to, date("2025-05-15"));
    assert_eq!(d.dates.len(), 30);
}

#[test]
fn failed_knowledge_branch_keeps_data_answer() {
    let llm = ScriptedLlm::with_fallback(MockLlm::new())
        .fail(Stage::Integrate, "down")
        .fail(Stage::Integrate, "down");
    let r = rig_with(Box::new(llm), demo_store(), false);
    let a = r.orch.answer(BOTH_Q).unwrap();
    assert!(a.degraded);
    assert_eq!(a.failures.len(), 1);
    assert_eq!(a.failures[0].stage, "knowledge.integrate");
    assert_eq!(r.llm.count(Stage::Synthesize), 0);
    assert_eq!(Some(a.bullets.join("\n")), a.audit.data_output.map(|d| d.data_brief.replace("- ", "")));
}

#[test]
fn failed_synthesis_falls_back_to_data_brief() {
    let llm = ScriptedLlm::with_fallback(MockLlm::new()).fail(Stage::Synthesize, "down");
    let r = rig_with(Box::new(llm), demo_store(), false);
    let a = r.orch.answer(BOTH_Q).unwrap();
    assert!(a.degraded);
    assert_eq!(a.failures[0].stage, "synthesize");
    assert!(a.audit.synthesis.is_none());
    assert!((3..=5).contains(&a.bullets.len()));
}

#[test]
fn router_failure_runs_both_branches() {
    let llm = ScriptedLlm::with_fallback(MockLlm::new()).fail(Stage::Route, "down");
    let r = rig_with(Box::new(llm), demo_store(), false);
    let a = r.orch.answer(BOTH_Q).unwrap();
    assert_eq!(a.route, Route::DataAndKnowledge);
    assert!(a.degraded && a.audit.router_output.degraded);
}

#[test]
fn empty_question_is_an_error() {
    let err = rig().orch.answer("  ").unwrap_err();
    assert_eq!(err.kind, ErrorKind::InvalidInput);
}

#[test]
fn concurrent_answers_do_not_mix() {
    let r = rig();
    let questions = [DATA_Q, KNOW_Q, BOTH_Q];
    let solo: Vec<String> = questions
        .iter()
        .map(|q| rig().orch.answer(q).unwrap().deterministic_json())
        .collect();
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..12)
            .map(|i| {
                let orch = &r.orch;
                let q = questions[i % 3];
                s.spawn(move || (i % 3, orch.answer(q).unwrap().deterministic_json()))
            })
            .collect();
        for h in handles {
            let (i, got) = h.join().unwrap();
            assert_eq!(got, solo[i]);
        }
    });
}

#[test]
fn audit_holds_the_exact_prompts_sent() {
    let r = rig();
    let a = r.orch.answer(BOTH_Q).unwrap();
    let key = |s: Stage, sys: &str, user: &str| format!("{s}\u{0}{sys}\u{0}{user}");
    let mut sent: Vec<String> = r.llm.calls().iter().map(|c| key(c.stage, &c.system, &c.user)).collect();
    let mut logged: Vec<String> = a.audit.exchanges.iter().map(|e| key(e.stage, &e.system, &e.user)).collect();
    sent.sort();
    logged.sort();
    assert_eq!(sent, logged);
    let data = a.audit.exchanges.iter().find(|e| e.stage == Stage::Data).unwrap();
    assert!(data.user.contains("| Metric | Pack 1 |"));
    assert!(data.system.is_empty());
}
