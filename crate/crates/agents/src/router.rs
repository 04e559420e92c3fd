//! Intent routing and query splitting.

use std::sync::LazyLock;

use chrono::NaiveDate;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{ErrorKind, StageError};
use crate::jsonio::{call_json, Exchange};
use crate::llm::{ChatRequest, LlmClient, Stage};
use crate::prompts;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    DataOnly,
    KnowledgeOnly,
    DataAndKnowledge,
}

impl Route {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "data_only" => Some(Route::DataOnly),
            "knowledge_only" => Some(Route::KnowledgeOnly),
            "data_and_knowledge" => Some(Route::DataAndKnowledge),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Route::DataOnly => "data_only",
            Route::KnowledgeOnly => "knowledge_only",
            Route::DataAndKnowledge => "data_and_knowledge",
        }
    }

    pub fn wants_data(self) -> bool {
        self != Route::KnowledgeOnly
    }

    pub fn wants_knowledge(self) -> bool {
        self != Route::DataOnly
    }
}

impl std::fmt::Display for Route {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutedQuery {
    pub route: Route,
    pub data_query: String,
    pub knowledge_query: String,
    pub date_from: Option<NaiveDate>,
    pub date_to: Option<NaiveDate>,
    /// Set when dates were present but unusable; the data branch fails on it.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub date_error: Option<String>,
    pub degraded: bool,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub problems: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DateError {
    #[error("invalid date {0}")]
    Invalid(String),
    #[error("inverted range: {from} > {to}")]
    Inverted { from: NaiveDate, to: NaiveDate },
}

pub static ISO_DATE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b\d{4}-\d{2}-\d{2}\b").expect("regex"));

/// First and last ISO `YYYY-MM-DD` date in `text`. A lone date gives a
/// one-day range. Anything that looks like a date but is not a calendar
/// date is an error rather than skipped.
pub fn extract_date_range(text: &str) -> Result<Option<(NaiveDate, NaiveDate)>, DateError> {
    let dates = ISO_DATE
        .find_iter(text)
        .map(|m| NaiveDate::parse_from_str(m.as_str(), "%Y-%m-%d").map_err(|_| DateError::Invalid(m.as_str().to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    let (Some(&from), Some(&to)) = (dates.first(), dates.last()) else {
        return Ok(None);
    };
    if from > to {
        return Err(DateError::Inverted { from, to });
    }
    Ok(Some((from, to)))
}

#[derive(Deserialize)]
struct RouterReply {
    route: String,
    #[serde(default)]
    data_query: String,
    #[serde(default)]
    knowledge_query: String,
}

/// Classifies `question`. Failure to get a usable reply, after one repair,
/// yields `data_and_knowledge` with the question as both sub-queries and
/// the degraded flag set.
pub fn route(question: &str, llm: &dyn LlmClient, log: &mut Vec<Exchange>) -> Result<RoutedQuery, StageError> {
    let question = question.trim();
    if question.is_empty() {
        return Err(StageError::new("route", ErrorKind::InvalidInput, "question is empty"));
    }
    let req = ChatRequest::new(Stage::Route, prompts::ROUTER, question);
    let check = |r: &RouterReply| match Route::parse(&r.route) {
        Some(_) => vec![],
        None => vec![format!("route {:?} is not one of data_only, knowledge_only, data_and_knowledge", r.route)],
    };
    let (route, mut data_query, mut knowledge_query, problems) = match call_json(llm, &req, log, check) {
        Err(e) => (None, String::new(), String::new(), vec![e.to_string()]),
        Ok(s) => match s.value {
            Some(r) if s.problems.is_empty() => (Route::parse(&r.route), r.data_query, r.knowledge_query, s.problems),
            _ => (None, String::new(), String::new(), s.problems),
        },
    };
    let degraded = route.is_none();
    let route = route.unwrap_or(Route::DataAndKnowledge);
    if degraded {
        tracing::warn!(?problems, "router fell back to data_and_knowledge");
        data_query = question.to_string();
        knowledge_query = question.to_string();
    }
    if !route.wants_knowledge() {
        knowledge_query.clear();
    } else if knowledge_query.trim().is_empty() {
        knowledge_query = question.to_string();
    }
    if !route.wants_data() {
        data_query.clear();
    } else if data_query.trim().is_empty() {
        data_query = question.to_string();
    }

    let mut rq = RoutedQuery {
        route,
        data_query: data_query.trim().to_string(),
        knowledge_query: knowledge_query.trim().to_string(),
        date_from: None,
        date_to: None,
        date_error: None,
        degraded,
        problems,
    };
    if route.wants_data() {
        // The router may rephrase dates away; the question keeps them.
        let found = match extract_date_range(&rq.data_query) {
            Ok(None) => extract_date_range(question),
            other => other,
        };
        match found {
            Ok(Some((from, to))) => {
                rq.date_from = Some(from);
                rq.date_to = Some(to);
            }
            Ok(None) => {}
            Err(e) => rq.date_error = Some(e.to_string()),
        }
    }
    Ok(rq)
}
