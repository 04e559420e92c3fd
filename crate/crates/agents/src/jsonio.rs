//! Strict single-object JSON replies with one repair round.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::llm::{ChatRequest, LlmClient, LlmError, Stage};

pub const REPAIR_INSTRUCTION: &str = "Return only the single JSON object, no code fences.";
/// Start of the text appended to a retried request.
pub const REPAIR_MARKER: &str = "\n\nYour previous reply had these problems:\n";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum JsonError {
    #[error("reply is wrapped in a code fence")]
    CodeFence,
    #[error("reply is not a single JSON object: {0}")]
    Syntax(String),
    #[error("reply is JSON but not an object")]
    NotObject,
    #[error("reply does not match the expected fields: {0}")]
    Shape(String),
}

/// Parses a reply that must be exactly one JSON object, surrounding
/// whitespace aside.
pub fn parse_object<T: DeserializeOwned>(text: &str) -> Result<T, JsonError> {
    let trimmed = text.trim();
    if trimmed.starts_with("```") {
        return Err(JsonError::CodeFence);
    }
    let value: serde_json::Value = serde_json::from_str(trimmed).map_err(|e| JsonError::Syntax(e.to_string()))?;
    if !value.is_object() {
        return Err(JsonError::NotObject);
    }
    serde_json::from_value(value).map_err(|e| JsonError::Shape(e.to_string()))
}

/// One request/reply pair as it went over the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub stage: Stage,
    pub attempt: u32,
    pub system: String,
    pub user: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reply: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Sends `req` and keeps the exchange in `log`.
pub fn send(llm: &dyn LlmClient, req: &ChatRequest, attempt: u32, log: &mut Vec<Exchange>) -> Result<String, LlmError> {
    let result = llm.chat(req);
    log.push(Exchange {
        stage: req.stage,
        attempt,
        system: req.system.clone(),
        user: req.user.clone(),
        reply: result.as_ref().ok().cloned(),
        error: result.as_ref().err().map(|e| e.to_string()),
    });
    result
}

#[derive(Debug, Clone, PartialEq)]
pub struct Structured<T> {
    /// Last reply that parsed, valid or not.
    pub value: Option<T>,
    /// Problems left after the last attempt; empty means clean.
    pub problems: Vec<String>,
    pub attempts: u32,
}

impl<T> Structured<T> {
    pub fn is_clean(&self) -> bool {
        self.value.is_some() && self.problems.is_empty()
    }
}

/// Sends `req`, parses the reply into `T` and runs `check` on it. A parse
/// failure or any reported problem triggers exactly one retry with the
/// problems and [`REPAIR_INSTRUCTION`] appended to the user message.
///
/// Transport failure on the first attempt is returned as an error.
pub fn call_json<T, F>(llm: &dyn LlmClient, req: &ChatRequest, log: &mut Vec<Exchange>, check: F) -> Result<Structured<T>, LlmError>
where
    T: DeserializeOwned,
    F: Fn(&T) -> Vec<String>,
{
    let reply = send(llm, req, 1, log)?;
    let (first, problems) = match parse_object::<T>(&reply) {
        Ok(v) => {
            let problems = check(&v);
            if problems.is_empty() {
                return Ok(Structured {
                    value: Some(v),
                    problems,
                    attempts: 1,
                });
            }
            (Some(v), problems)
        }
        Err(e) => (None, vec![e.to_string()]),
    };
    tracing::debug!(stage = %req.stage, ?problems, "repairing reply");

    let mut user = req.user.clone();
    user.push_str(REPAIR_MARKER);
    for p in &problems {
        user.push_str("- ");
        user.push_str(p);
        user.push('\n');
    }
    user.push('\n');
    user.push_str(REPAIR_INSTRUCTION);
    let retry = ChatRequest { user, ..req.clone() };

    let fallback = |mut problems: Vec<String>, extra: String| {
        problems.push(extra);
        Structured {
            value: first,
            problems,
            attempts: 2,
        }
    };
    match send(llm, &retry, 2, log) {
        Err(e) => Ok(fallback(problems, format!("repair attempt failed: {e}"))),
        Ok(reply) => match parse_object::<T>(&reply) {
            Ok(v) => {
                let problems = check(&v);
                Ok(Structured {
                    value: Some(v),
                    problems,
                    attempts: 2,
                })
            }
            Err(e) => Ok(fallback(problems, format!("repair attempt: {e}"))),
        },
    }
}
