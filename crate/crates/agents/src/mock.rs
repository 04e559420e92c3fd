//! Deterministic stand-in for a chat model.
//!
//! Replies are computed from the request alone, so a pipeline run is a pure
//! function of its inputs. Routing follows the router prompt's own rules:
//! dates plus a request for causes or improvements mean both branches,
//! dates alone mean data, no dates mean knowledge. Data replies read the
//! V/T/H tables out of the context; knowledge replies reuse the retrieved
//! slice keys.

use std::collections::BTreeMap;
use std::sync::LazyLock;

use regex::Regex;
use serde_json::{json, Value};

use crate::jsonio::REPAIR_MARKER;
use crate::llm::{ChatRequest, LlmClient, LlmError, Stage};
use crate::prompts::{self, DATA_OUTPUT_HEADER, EXPERT_HEADER, KNOWLEDGE_OUTPUT_HEADER};
use crate::router::ISO_DATE;
use crate::validate::{bullets, split_bullet};

/// Words that ask for explanation or action rather than statistics.
const REASON_WORDS: &[&str] = &[
    "why", "explain", "cause", "causing", "mechanism", "root", "optimiz", "suggest", "recommend", "improve", "propose",
    "interpret", "factor", "strateg", "adjust", "mitigat", "prevent", "indicate",
];

static DATA_WORDS: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\b(records?|dataset|database|pack \d+)\b").expect("regex"));
static DATE_SPAN: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?i)\b(?:(?:using|with)\s+(?:the\s+)?(?:records|data|dataset)\s+)?(?:from|between|for the period|during)?\s*\d{4}-\d{2}-\d{2}\s*(?:to|and|through|-)\s*\d{4}-\d{2}-\d{2}\s*,?",
    )
    .expect("regex")
});

#[derive(Debug, Clone, Default)]
pub struct MockLlm;

impl MockLlm {
    pub fn new() -> Self {
        Self
    }
}

impl LlmClient for MockLlm {
    fn chat(&self, req: &ChatRequest) -> Result<String, LlmError> {
        // a retry answers the original request again
        let user = req.user.split(REPAIR_MARKER).next().unwrap_or_default();
        let reply = match req.stage {
            Stage::Route => route(user),
            Stage::Expand => expand(user),
            Stage::Expert => return Ok(expert(user)),
            Stage::Integrate => integrate(user),
            Stage::Data => data(user),
            Stage::Synthesize => synthesize(user),
        };
        Ok(reply.to_string())
    }

    fn describe(&self) -> String {
        "mock".into()
    }
}

fn asks_for_reasons(q: &str) -> bool {
    let lower = q.to_lowercase();
    REASON_WORDS.iter().any(|w| lower.contains(w))
}

/// Question with any date span removed, capitalized.
fn without_dates(q: &str) -> String {
    let s = DATE_SPAN.replace_all(q, " ");
    let s = ISO_DATE.replace_all(&s, " ");
    let s = s.split_whitespace().collect::<Vec<_>>().join(" ");
    let s = s.trim_start_matches([',', ' ', '.']);
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn route(question: &str) -> Value {
    let q = question.trim();
    let dated = ISO_DATE.is_match(q);
    let data_query = format!("Retrieve and numerically analyze the internal inconsistency dataset: {q}");
    let knowledge_query =
        format!("{} Focus on mechanisms, root causes and mitigation in stationary ESS.", without_dates(q));
    let (route, data_query, knowledge_query) = match (dated, asks_for_reasons(q)) {
        (true, false) => ("data_only", data_query, String::new()),
        (true, true) => ("data_and_knowledge", data_query, knowledge_query),
        (false, _) if DATA_WORDS.is_match(q) => ("data_and_knowledge", data_query, knowledge_query),
        (false, _) => ("knowledge_only", String::new(), q.to_string()),
    };
    json!({"route": route, "data_query": data_query, "knowledge_query": knowledge_query})
}

fn topic(q: &str) -> String {
    let t = without_dates(q);
    let t = t.trim_end_matches(['?', '.', ' ']);
    let mut c = t.chars();
    match c.next() {
        Some(f) => f.to_lowercase().chain(c).collect(),
        None => String::new(),
    }
}

fn expand(question: &str) -> Value {
    let t = topic(question);
    json!({"queries": [
        format!("Root causes and mechanisms behind: {t}"),
        format!("System impacts on stationary energy storage of: {t}"),
        format!("Mitigation and optimization strategies for: {t}"),
    ]})
}

fn expert(question: &str) -> String {
    format!(
        "Assumptions: a utility-scale stationary ESS with series-connected LFP cells, parallel packs and forced cooling.\n\n\
         Question: {}\n\n\
         Root causes: manufacturing spread in capacity and internal resistance, uneven coolant flow and busbar resistance, \
         and balancing that cannot keep up with drift.\n\n\
         Analysis: voltage and temperature spread reinforce each other because warmer cells age faster and carry more current.\n\n\
         Recommendations: trend the worst packs at every standard operation, verify cooling flow, and recalibrate balancing thresholds.",
        question.trim()
    )
}

struct Snip {
    score: f64,
    key: String,
}

static SNIPPET_LINE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\[\d+\] \S+ \(score (-?[0-9.]+)\)$").expect("regex"));

fn snippets(message: &str) -> Vec<Snip> {
    let mut out = Vec::new();
    let mut lines = message.lines();
    while let Some(line) = lines.next() {
        if line.starts_with(EXPERT_HEADER) {
            break;
        }
        if let Some(c) = SNIPPET_LINE.captures(line) {
            let score = c[1].parse().unwrap_or(0.0);
            if let Some(key) = lines.next().and_then(|l| l.strip_prefix("Key: ")) {
                out.push(Snip {
                    score,
                    key: key.to_string(),
                });
            }
        }
    }
    out
}

/// At most 18 words, no trailing punctuation, one final period.
fn compact(text: &str) -> String {
    let words: Vec<&str> = text.split_whitespace().take(18).collect();
    let s = words.join(" ");
    format!("{}.", s.trim_end_matches(['.', ',', ';', ':', '!', '?']))
}

fn integrate(message: &str) -> Value {
    let snips = snippets(message);
    let best = snips.iter().map(|s| s.score).fold(f64::NEG_INFINITY, f64::max);
    let relevance = if snips.is_empty() {
        "low"
    } else if best >= 0.6 {
        "high"
    } else if best >= 0.3 {
        "medium"
    } else {
        "low"
    };
    let key = |i: usize| snips.get(i).map(|s| compact(&s.key));
    let mut summary = Vec::new();
    if relevance == "low" {
        summary.push("- [Mechanism] Capacity and resistance spread drives unequal cell currents and heat in series strings. [LLM]".to_string());
        summary.push("- [Cause] Uneven cooling and busbar resistance widen temperature and voltage spread over cycles. [LLM]".to_string());
        summary.push("- [Mitigation] Verify coolant flow balance and recalibrate balancing thresholds during maintenance windows. [LLM]".to_string());
    } else {
        let tag = if relevance == "high" { "[RAG]" } else { "[RAG][LLM]" };
        summary.push(format!("- [Mechanism] {} {tag}", key(0).unwrap_or_default()));
        summary.push(format!(
            "- [Cause] {} {tag}",
            key(1).unwrap_or_else(|| "Uneven cooling widens cell temperature spread.".into())
        ));
        summary.push(format!(
            "- [Mitigation] {} [RAG][LLM]",
            key(2).unwrap_or_else(|| "Balance cooling flow and recalibrate balancing.".into())
        ));
        if relevance == "medium" {
            summary.push("- [Mitigation] Recheck the flagged packs after each standard operation to confirm the fix. [LLM]".to_string());
        }
    }
    let rag_view = if snips.is_empty() {
        "No retrieved evidence.".to_string()
    } else {
        snips.iter().map(|s| compact(&s.key)).collect::<Vec<_>>().join(" ")
    };
    json!({
        "relevance": relevance,
        "rag_view": rag_view,
        "llm_view": "Cell spread, cooling non-uniformity and balancing limits interact; verify each on site.",
        "summary": summary.join("\n"),
    })
}

#[derive(Default)]
struct Extremes {
    /// Per metric row label: pack index (1-based) -> worst value seen.
    worst: BTreeMap<&'static str, BTreeMap<usize, f64>>,
}

const ROWS: [(&str, bool); 4] = [
    ("V_row1", true),
    ("V_row3", true),
    ("T_row1", true),
    ("H ", false),
];

impl Extremes {
    fn scan(context: &str) -> (Self, usize) {
        let mut ex = Extremes::default();
        let mut days = 0;
        for line in context.lines() {
            if line.starts_with("## ") {
                days += 1;
            }
            for (label, larger_is_worse) in ROWS {
                let Some(rest) = line.strip_prefix("| ").filter(|r| r.starts_with(label)) else {
                    continue;
                };
                let row = ex.worst.entry(label).or_default();
                for (p, cell) in rest.split('|').skip(1).enumerate() {
                    let Ok(v) = cell.trim().trim_end_matches('†').parse::<f64>() else {
                        continue;
                    };
                    let e = row.entry(p + 1).or_insert(v);
                    *e = if larger_is_worse { e.max(v) } else { e.min(v) };
                }
            }
        }
        (ex, days)
    }

    /// Pack with the worst value of a row; ties go to the lower pack.
    fn worst(&self, label: &str, larger_is_worse: bool) -> Option<(usize, f64)> {
        self.worst.get(label)?.iter().fold(None, |acc, (&p, &v)| match acc {
            Some((_, best)) if (larger_is_worse && v <= best) || (!larger_is_worse && v >= best) => acc,
            _ => Some((p, v)),
        })
    }
}

fn data(message: &str) -> Value {
    let (ex, days) = Extremes::scan(message);
    let (Some((vp, v)), Some((tp, t)), Some((hp, h))) =
        (ex.worst("V_row1", true), ex.worst("T_row1", true), ex.worst("H ", false))
    else {
        return json!({
            "data_analysis": "The context holds no V, T or H matrices.",
            "data_summary": "No matrices were retrieved, so no pack comparison is possible.",
            "data_brief": "- No V, T or H matrices were retrieved for this question.\n- Check the requested dates against the record store.\n- Rerun the query once records exist.",
        });
    };
    let bad = ex.worst("V_row3", true).map(|(p, n)| (p, n as u64)).unwrap_or((vp, 0));
    let brief = [
        format!("- Pack {vp} has the largest worst-case voltage spread, {v:.4} V, across {days} recorded day(s)."),
        format!("- Pack {tp} shows the widest temperature spread at {t:.2} °C; check its cooling path."),
        format!("- Pack {hp} has the lowest state of health at {h:.3}; schedule a capacity check."),
        format!("- Rebalance pack {vp} first and recheck the {} flagged cell(s) of pack {} next operation.", bad.1, bad.0),
    ];
    json!({
        "data_analysis": format!(
            "Scanned {days} day(s). Maximum V_row1 is {v:.4} V on pack {vp}. Maximum T_row1 is {t:.2} °C on pack {tp}. \
             Minimum H is {h:.3} on pack {hp}. Most flagged cells: {} on pack {}.",
            bad.1, bad.0
        ),
        "data_summary": format!(
            "Pack {vp} is the most voltage-inconsistent pack in the retrieved records.\n\n\
             Pack {tp} has the worst thermal spread and pack {hp} the lowest SOH; both deserve inspection."
        ),
        "data_brief": brief.join("\n"),
    })
}

fn section_json(message: &str, header: &str) -> Option<Value> {
    let text = prompts::section(message, header)?;
    serde_json::from_str(text).ok()
}

fn synthesize(message: &str) -> Value {
    let data = section_json(message, DATA_OUTPUT_HEADER);
    let knowledge = section_json(message, KNOWLEDGE_OUTPUT_HEADER);
    let field = |v: &Option<Value>, k: &str| v.as_ref().and_then(|v| v[k].as_str()).map(bullets).unwrap_or_default();
    let data_bullets = field(&data, "data_brief");
    let knowledge_bullets = field(&knowledge, "summary");
    let mut out = Vec::new();
    for b in data_bullets.iter().take(2) {
        out.push(format!("- [Data] {} [LLM]", split_bullet(b).1));
    }
    let k_take = if data_bullets.is_empty() { 2 } else { 1 };
    for b in knowledge_bullets.iter().take(k_take) {
        let (_, content, tag) = split_bullet(b);
        out.push(format!("- [Knowledge] {content} {}", tag.unwrap_or("[LLM]")));
    }
    if knowledge_bullets.is_empty() {
        out.push("- [Integrated] Track the flagged packs at every standard operation and escalate persistent outliers. [LLM]".into());
    } else {
        out.push("- [Integrated] Tie the worst data-flagged packs to the retrieved mechanisms and apply the listed mitigations first. [RAG][LLM]".into());
    }
    while out.len() < 3 {
        out.push("- [Integrated] Confirm each finding on site before changing operating limits. [LLM]".into());
    }
    json!({"final_answer": out.join("\n")})
}
