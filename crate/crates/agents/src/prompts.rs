//! Prompt templates and the user-message layouts built around them.
//!
//! The `*.txt` templates under `prompts/` are versioned with the crate.
//! Placeholders are `{name}` and are filled in a single pass, so inserted
//! text is never rescanned.

use std::sync::LazyLock;

use regex::{Captures, Regex};

/// Literature distillation into Markdown knowledge slices.
pub const DISTILL: &str = include_str!("../prompts/distill.txt");
pub const ROUTER: &str = include_str!("../prompts/router.txt");
/// Data agent; placeholders `{context}` and `{question}`.
pub const DATA: &str = include_str!("../prompts/data.txt");
pub const EXPERT: &str = include_str!("../prompts/expert.txt");
pub const INTEGRATE: &str = include_str!("../prompts/integrate.txt");
pub const SYNTHESIZE: &str = include_str!("../prompts/synthesize.txt");
/// Output schema appended to [`SYNTHESIZE`]; the base text names no fields.
pub const SYNTHESIZE_SCHEMA: &str = include_str!("../prompts/synthesize_schema.txt");
/// Query expansion; placeholder `{n}`.
pub const EXPAND: &str = include_str!("../prompts/expand.txt");

pub const NONE: &str = "(none)";
pub const QUESTION_HEADER: &str = "User question:";
pub const SNIPPETS_HEADER: &str = "Retrieved knowledge snippets:";
pub const EXPERT_HEADER: &str = "Standalone expert answer:";
pub const RECORDS_HEADER: &str = "Retrieved records:";
pub const DATA_OUTPUT_HEADER: &str = "Data analysis output:";
pub const KNOWLEDGE_OUTPUT_HEADER: &str = "Knowledge synthesis output:";

static PLACEHOLDER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\{([a-z_]+)\}").expect("regex"));

/// Replaces `{name}` for every listed name; unknown placeholders stay.
pub fn fill(template: &str, values: &[(&str, &str)]) -> String {
    PLACEHOLDER
        .replace_all(template, |c: &Captures| {
            let name = &c[1];
            values
                .iter()
                .find(|(k, _)| *k == name)
                .map(|(_, v)| v.to_string())
                .unwrap_or_else(|| c[0].to_string())
        })
        .into_owned()
}

pub fn data_user(context: &str, question: &str) -> String {
    fill(DATA, &[("context", context), ("question", question)])
}

pub fn expand_system(n: usize) -> String {
    fill(EXPAND, &[("n", &n.to_string())])
}

pub fn synthesize_system() -> String {
    format!("{SYNTHESIZE}{SYNTHESIZE_SCHEMA}")
}

/// One retrieved slice as shown to the integrator.
pub struct Snippet<'a> {
    pub id: &'a str,
    pub score: f64,
    pub key: &'a str,
    pub body: &'a str,
}

pub fn integrate_user(question: &str, snippets: &[Snippet<'_>], expert: &str) -> String {
    let mut s = format!("{QUESTION_HEADER}\n{question}\n\n{SNIPPETS_HEADER}\n");
    if snippets.is_empty() {
        s.push_str(NONE);
        s.push('\n');
    }
    for (n, sn) in snippets.iter().enumerate() {
        s.push_str(&format!("[{}] {} (score {:.4})\nKey: {}\n{}\n\n", n + 1, sn.id, sn.score, sn.key, sn.body));
    }
    s.push_str(&format!("\n{EXPERT_HEADER}\n{expert}\n"));
    s
}

pub fn synthesize_user(question: &str, records: Option<&str>, data_json: Option<&str>, knowledge_json: Option<&str>) -> String {
    format!(
        "{QUESTION_HEADER}\n{question}\n\n{RECORDS_HEADER}\n{}\n\n{DATA_OUTPUT_HEADER}\n{}\n\n{KNOWLEDGE_OUTPUT_HEADER}\n{}\n",
        records.unwrap_or(NONE).trim_end(),
        data_json.unwrap_or(NONE),
        knowledge_json.unwrap_or(NONE)
    )
}

/// Text following `header` up to the next blank line.
pub fn section<'a>(message: &'a str, header: &str) -> Option<&'a str> {
    let start = message.find(header)? + header.len();
    let rest = message[start..].trim_start_matches('\n');
    let end = rest.find("\n\n").unwrap_or(rest.len());
    Some(rest[..end].trim())
}
