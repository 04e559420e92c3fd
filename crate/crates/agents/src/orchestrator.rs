//! Question answering across the routed branches.

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data_agent::{run_data_agent, DataAgentOutput, RecordSource};
use crate::embed::Embedder;
use crate::error::StageError;
use crate::jsonio::Exchange;
use crate::knowledge::{KnowledgeIndex, RetrievalHit, DEFAULT_TOP_K};
use crate::knowledge_agent::{ms, run_knowledge_agent, KnowledgeAgentOutput, KnowledgeParams, KnowledgeRun};
use crate::llm::LlmClient;
use crate::router::{self, Route, RoutedQuery};
use crate::synth::{run_synthesizer, SynthOutput};
use crate::validate::{bullets, validate_bullets, BulletReport, BulletSpec};
use crate::Timings;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub top_k: usize,
    /// Sub-queries requested from the expansion step.
    pub expansions: usize,
    /// Also search with the unexpanded question.
    pub include_original: bool,
    /// Range used when a data question names no dates.
    pub default_window_days: u32,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            top_k: DEFAULT_TOP_K,
            expansions: 3,
            include_original: true,
            default_window_days: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Audit {
    pub router_output: RoutedQuery,
    pub data_output: Option<DataAgentOutput>,
    pub knowledge_output: Option<KnowledgeAgentOutput>,
    pub retrieval_hits: Option<Vec<RetrievalHit>>,
    pub synthesis: Option<SynthOutput>,
    /// Check of the final bullets against the rules of their source.
    pub bullet_report: BulletReport,
    /// Every model call in pipeline order, prompts verbatim.
    pub exchanges: Vec<Exchange>,
    pub timings_ms: Timings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalAnswer {
    pub question: String,
    pub route: Route,
    /// Bullet texts without the `- ` marker.
    pub bullets: Vec<String>,
    pub degraded: bool,
    pub failures: Vec<StageError>,
    pub data_summary: Option<String>,
    pub knowledge_summary: Option<String>,
    pub audit: Audit,
}

impl FinalAnswer {
    /// Copy without wall-clock measurements; equal inputs give equal views.
    pub fn without_timings(&self) -> Self {
        let mut a = self.clone();
        a.audit.timings_ms.clear();
        a
    }

    pub fn deterministic_json(&self) -> String {
        bess_core::records::to_canonical_json(&self.without_timings())
    }

    /// Route line, bullets and any failure notes, as printed by the CLI.
    pub fn render_text(&self) -> String {
        let mut s = format!("route: {}\n", self.route);
        for b in &self.bullets {
            s.push_str("- ");
            s.push_str(b);
            s.push('\n');
        }
        if self.degraded {
            s.push_str("degraded: yes\n");
        }
        for f in &self.failures {
            s.push_str(&format!("failed: {f}\n"));
        }
        s
    }
}

pub struct Orchestrator {
    pub llm: Arc<dyn LlmClient>,
    pub embedder: Arc<dyn Embedder>,
    pub store: Arc<dyn RecordSource>,
    pub index: Arc<KnowledgeIndex>,
    pub config: AgentConfig,
}

type Branch<T> = (Result<T, StageError>, Vec<Exchange>, Timings);

impl Orchestrator {
    fn data_branch(&self, rq: &RoutedQuery) -> Branch<DataAgentOutput> {
        let mut log = Vec::new();
        let t0 = Instant::now();
        let r = run_data_agent(rq, &*self.store, &*self.llm, self.config.default_window_days, &mut log);
        (r, log, Timings::from([("data".to_string(), ms(t0))]))
    }

    fn knowledge_branch(&self, rq: &RoutedQuery) -> Branch<KnowledgeRun> {
        let mut log = Vec::new();
        let mut timings = Timings::new();
        let t0 = Instant::now();
        let params = KnowledgeParams {
            top_k: self.config.top_k,
            expansions: self.config.expansions,
            include_original: self.config.include_original,
        };
        let r = run_knowledge_agent(
            &rq.knowledge_query,
            &self.index,
            &*self.embedder,
            &*self.llm,
            params,
            &mut log,
            &mut timings,
        );
        timings.insert("knowledge".into(), ms(t0));
        (r, log, timings)
    }

    /// Routes `question`, runs the branches it needs and merges them. Stage
    /// failures end up in `failures` with `degraded` set; only an empty
    /// question is an error.
    pub fn answer(&self, question: &str) -> Result<FinalAnswer, StageError> {
        let t_total = Instant::now();
        let mut log = Vec::new();
        let mut timings = Timings::new();
        let t0 = Instant::now();
        let rq = router::route(question, &*self.llm, &mut log)?;
        timings.insert("route".into(), ms(t0));

        let (data, knowledge) = match rq.route {
            Route::DataOnly => (Some(self.data_branch(&rq)), None),
            Route::KnowledgeOnly => (None, Some(self.knowledge_branch(&rq))),
            Route::DataAndKnowledge => std::thread::scope(|s| {
                let k = s.spawn(|| self.knowledge_branch(&rq));
                let d = self.data_branch(&rq);
                (Some(d), Some(k.join().expect("knowledge branch panicked")))
            }),
        };

        let mut failures = Vec::new();
        let data = merge(data, &mut log, &mut timings, &mut failures);
        let knowledge = merge(knowledge, &mut log, &mut timings, &mut failures);
        let (k_out, hits) = match knowledge {
            Some(k) => (Some(k.output), Some(k.hits)),
            None => (None, None),
        };

        let mut synthesis = None;
        let (text, spec) = match (&data, &k_out) {
            (Some(d), Some(k)) => {
                let t0 = Instant::now();
                let r = run_synthesizer(question.trim(), Some(d), Some(k), &*self.llm, &mut log);
                timings.insert("synthesize".into(), ms(t0));
                match r {
                    Ok(s) => {
                        let text = s.final_answer.clone();
                        synthesis = Some(s);
                        (text, BulletSpec::synthesis())
                    }
                    Err(e) => {
                        failures.push(e);
                        (d.data_brief.clone(), BulletSpec::data_brief())
                    }
                }
            }
            (Some(d), None) => (d.data_brief.clone(), BulletSpec::data_brief()),
            (None, Some(k)) => (k.summary.clone(), BulletSpec::knowledge_summary()),
            (None, None) => (String::new(), BulletSpec::data_brief()),
        };
        let report = validate_bullets(&text, &spec);
        timings.insert("total".into(), ms(t_total));

        let degraded = rq.degraded
            || !failures.is_empty()
            || !report.valid
            || data.as_ref().is_some_and(|d| d.degraded)
            || k_out.as_ref().is_some_and(|k| k.degraded)
            || synthesis.as_ref().is_some_and(|s| s.degraded);
        for f in &failures {
            tracing::warn!(stage = %f.stage, "stage failed: {}", f.message);
        }
        Ok(FinalAnswer {
            question: question.to_string(),
            route: rq.route,
            bullets: bullets(&text),
            degraded,
            failures,
            data_summary: data.as_ref().map(|d| d.data_summary.clone()),
            knowledge_summary: k_out.as_ref().map(|k| k.summary.clone()),
            audit: Audit {
                router_output: rq,
                data_output: data,
                knowledge_output: k_out,
                retrieval_hits: hits,
                synthesis,
                bullet_report: report,
                exchanges: log,
                timings_ms: timings,
            },
        })
    }
}

/// Folds a branch's log and timings into the answer's; failures are kept.
fn merge<T>(
    branch: Option<Branch<T>>,
    log: &mut Vec<Exchange>,
    timings: &mut Timings,
    failures: &mut Vec<StageError>,
) -> Option<T> {
    let (r, mut l, t) = branch?;
    log.append(&mut l);
    timings.extend(t);
    r.map_err(|e| failures.push(e)).ok()
}
