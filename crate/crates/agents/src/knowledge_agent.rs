//! Retrieval-backed knowledge answers.
//!
//! Expansion and retrieval run next to the standalone expert call; the
//! integrator then sees the question, the retrieved slices and the expert
//! answer, grades the slices and writes the tagged summary.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::embed::Embedder;
use crate::error::{ErrorKind, StageError};
use crate::jsonio::{call_json, send, Exchange};
use crate::knowledge::{expand_query, retrieve_topk, KnowledgeIndex, RetrievalHit};
use crate::llm::{ChatRequest, LlmClient, Stage};
use crate::prompts::{self, Snippet};
use crate::validate::{validate_bullets, BulletReport, BulletSpec};
use crate::Timings;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relevance {
    High,
    Medium,
    Low,
}

impl Relevance {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "high" => Some(Relevance::High),
            "medium" => Some(Relevance::Medium),
            "low" => Some(Relevance::Low),
            _ => None,
        }
    }

    /// How retrieved evidence and model reasoning are weighed.
    pub fn policy(self) -> &'static str {
        match self {
            Relevance::High => "evidence-centric",
            Relevance::Medium => "merged",
            Relevance::Low => "reasoning-centric",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeAgentOutput {
    pub relevance: Relevance,
    pub policy: String,
    pub rag_view: String,
    pub llm_view: String,
    pub summary: String,
    pub expert_answer: String,
    pub sub_queries: Vec<String>,
    pub bullet_report: BulletReport,
    pub degraded: bool,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub problems: Vec<String>,
}

#[derive(Deserialize)]
struct IntegrateReply {
    relevance: String,
    rag_view: String,
    llm_view: String,
    summary: String,
}

#[derive(Debug, Clone, Copy)]
pub struct KnowledgeParams {
    pub top_k: usize,
    pub expansions: usize,
    pub include_original: bool,
}

pub struct KnowledgeRun {
    pub output: KnowledgeAgentOutput,
    pub hits: Vec<RetrievalHit>,
}

pub fn run_knowledge_agent(
    query: &str,
    index: &KnowledgeIndex,
    embedder: &dyn Embedder,
    llm: &dyn LlmClient,
    params: KnowledgeParams,
    log: &mut Vec<Exchange>,
    timings: &mut Timings,
) -> Result<KnowledgeRun, StageError> {
    let query = query.trim();
    if query.is_empty() {
        return Err(StageError::new("knowledge", ErrorKind::InvalidInput, "knowledge query is empty"));
    }
    let mut problems = Vec::new();
    let mut expert_log = Vec::new();

    let (retrieval, expert) = std::thread::scope(|s| {
        let expert = s.spawn(|| {
            let t0 = Instant::now();
            let req = ChatRequest::new(Stage::Expert, prompts::EXPERT, query);
            let r = send(llm, &req, 1, &mut expert_log);
            (r, ms(t0))
        });
        let t0 = Instant::now();
        let expansion = expand_query(query, llm, params.expansions, params.include_original, log);
        let t_expand = ms(t0);
        let t1 = Instant::now();
        let hits = match &expansion {
            Ok(e) if !index.is_empty() => Some(retrieve_topk(&e.queries, index, embedder, params.top_k)),
            _ => None,
        };
        let t_retrieve = ms(t1);
        let expert = expert.join().expect("expert thread panicked");
        ((expansion, hits, t_expand, t_retrieve), expert)
    });
    let (expansion, hits, t_expand, t_retrieve) = retrieval;
    let (expert, t_expert) = expert;
    timings.insert("knowledge.expand".into(), t_expand);
    timings.insert("knowledge.retrieve".into(), t_retrieve);
    timings.insert("knowledge.expert".into(), t_expert);
    log.append(&mut expert_log);

    let expansion = expansion.map_err(|e| StageError::new("knowledge.expand", ErrorKind::InvalidInput, e))?;
    if expansion.degraded {
        problems.push(format!("query expansion fell back to the question: {}", expansion.problems.join("; ")));
    }
    let hits = match hits {
        None => {
            problems.push("knowledge index is empty; expert reasoning only".into());
            Vec::new()
        }
        Some(Err(e)) => {
            problems.push(format!("retrieval failed: {e}"));
            Vec::new()
        }
        Some(Ok(h)) => h,
    };
    let expert = expert.map_err(|e| StageError::new("knowledge.expert", ErrorKind::Llm, e))?;

    let snippets: Vec<Snippet<'_>> = hits
        .iter()
        .filter_map(|h| {
            let s = index.get(&h.slice_id)?;
            Some(Snippet {
                id: &s.id,
                score: h.fused_score,
                key: &s.key,
                body: &s.body,
            })
        })
        .collect();
    let req = ChatRequest::new(Stage::Integrate, prompts::INTEGRATE, prompts::integrate_user(query, &snippets, &expert));
    let spec = BulletSpec::knowledge_summary();
    let t0 = Instant::now();
    let reply = call_json(llm, &req, log, |r: &IntegrateReply| {
        let mut p = validate_bullets(&r.summary, &spec).summary();
        if Relevance::parse(&r.relevance).is_none() {
            p.push(format!("relevance {:?} is not high, medium or low", r.relevance));
        }
        p
    });
    timings.insert("knowledge.integrate".into(), ms(t0));
    let reply = reply.map_err(|e| StageError::new("knowledge.integrate", ErrorKind::Llm, e))?;
    let Some(r) = reply.value else {
        return Err(StageError::new(
            "knowledge.integrate",
            ErrorKind::Format,
            format!("unusable reply: {}", reply.problems.join("; ")),
        ));
    };
    problems.extend(reply.problems);

    let mut relevance = Relevance::parse(&r.relevance).unwrap_or(Relevance::Low);
    if hits.is_empty() && relevance != Relevance::Low {
        problems.push(format!("relevance {:?} overridden to low: nothing was retrieved", r.relevance));
        relevance = Relevance::Low;
    }
    Ok(KnowledgeRun {
        output: KnowledgeAgentOutput {
            relevance,
            policy: relevance.policy().into(),
            bullet_report: validate_bullets(&r.summary, &spec),
            rag_view: r.rag_view,
            llm_view: r.llm_view,
            summary: r.summary,
            expert_answer: expert,
            sub_queries: expansion.queries,
            degraded: !problems.is_empty(),
            problems,
        },
        hits,
    })
}

pub(crate) fn ms(t0: Instant) -> f64 {
    t0.elapsed().as_secs_f64() * 1e3
}
