//! Cross-source synthesis of the data and knowledge branches.

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::data_agent::DataAgentOutput;
use crate::error::{ErrorKind, StageError};
use crate::jsonio::{call_json, Exchange};
use crate::knowledge_agent::KnowledgeAgentOutput;
use crate::llm::{ChatRequest, LlmClient, Stage};
use crate::prompts;
use crate::validate::{validate_bullets, BulletReport, BulletSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthOutput {
    pub final_answer: String,
    pub bullet_report: BulletReport,
    pub degraded: bool,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub problems: Vec<String>,
}

#[derive(Deserialize)]
struct SynthReply {
    final_answer: String,
}

/// Branch outputs as shown to the synthesizer: conclusions only, the long
/// reasoning fields stay out.
fn data_view(d: &DataAgentOutput) -> String {
    json!({
        "date_from": d.date_from,
        "date_to": d.date_to,
        "dates": d.dates,
        "data_summary": d.data_summary,
        "data_brief": d.data_brief,
    })
    .to_string()
}

fn knowledge_view(k: &KnowledgeAgentOutput) -> String {
    json!({
        "relevance": k.relevance,
        "rag_view": k.rag_view,
        "llm_view": k.llm_view,
        "summary": k.summary,
    })
    .to_string()
}

pub fn run_synthesizer(
    question: &str,
    data: Option<&DataAgentOutput>,
    knowledge: Option<&KnowledgeAgentOutput>,
    llm: &dyn LlmClient,
    log: &mut Vec<Exchange>,
) -> Result<SynthOutput, StageError> {
    const STAGE: &str = "synthesize";
    if data.is_none() && knowledge.is_none() {
        return Err(StageError::new(STAGE, ErrorKind::InvalidInput, "nothing to synthesize"));
    }
    let user = prompts::synthesize_user(
        question,
        data.map(|d| d.records_markdown.as_str()),
        data.map(data_view).as_deref(),
        knowledge.map(knowledge_view).as_deref(),
    );
    let req = ChatRequest::new(Stage::Synthesize, prompts::synthesize_system(), user);
    let spec = BulletSpec::synthesis();
    let reply = call_json(llm, &req, log, |r: &SynthReply| validate_bullets(&r.final_answer, &spec).summary())
        .map_err(|e| StageError::new(STAGE, ErrorKind::Llm, e))?;
    let Some(r) = reply.value else {
        return Err(StageError::new(
            STAGE,
            ErrorKind::Format,
            format!("unusable reply: {}", reply.problems.join("; ")),
        ));
    };
    Ok(SynthOutput {
        bullet_report: validate_bullets(&r.final_answer, &spec),
        final_answer: r.final_answer,
        degraded: !reply.problems.is_empty(),
        problems: reply.problems,
    })
}
