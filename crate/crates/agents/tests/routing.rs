use bess_agents::llm::RecordingLlm;
use bess_agents::router::route;
use bess_agents::{MockLlm, Route};
use serde::Deserialize;

#[derive(Deserialize)]
struct Case {
    question: String,
    route: String,
}

fn cases() -> Vec<Case> {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/eval/routing.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

#[test]
fn thirty_questions_route_as_labelled() {
    let llm = RecordingLlm::new(MockLlm::new());
    let cases = cases();
    assert_eq!(cases.len(), 30);
    let mut wrong = Vec::new();
    for c in &cases {
        let mut log = Vec::new();
        let rq = route(&c.question, &llm, &mut log).unwrap();
        if rq.route.as_str() != c.route {
            wrong.push(format!("{} -> {}", c.question, rq.route));
        }
        assert!(!rq.degraded);
        match rq.route {
            Route::DataOnly => assert!(rq.knowledge_query.is_empty() && !rq.data_query.is_empty()),
            Route::KnowledgeOnly => assert!(rq.data_query.is_empty() && !rq.knowledge_query.is_empty()),
            Route::DataAndKnowledge => assert!(!rq.data_query.is_empty() && !rq.knowledge_query.is_empty()),
        }
        if rq.route.wants_data() {
            assert!(rq.date_from.is_some() && rq.date_to >= rq.date_from, "{}", c.question);
        }
    }
    assert!(wrong.is_empty(), "{wrong:#?}");
    assert_eq!(llm.calls().len(), 30);
}
