//! Record-store analysis.

use bess_core::records::{render_markdown, RecordEntry, RecordError, RecordStore};
use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{ErrorKind, StageError};
use crate::jsonio::{call_json, Exchange};
use crate::llm::{ChatRequest, LlmClient, Stage};
use crate::prompts;
use crate::router::RoutedQuery;
use crate::validate::{validate_bullets, BulletReport, BulletSpec};

/// Read access to the record dataset.
pub trait RecordSource: Send + Sync {
    fn date_bounds(&self) -> Option<(NaiveDate, NaiveDate)>;
    fn entries_between(&self, from: NaiveDate, to: NaiveDate) -> Result<Vec<RecordEntry>, RecordError>;
}

impl RecordSource for RecordStore {
    fn date_bounds(&self) -> Option<(NaiveDate, NaiveDate)> {
        Some((self.first_date()?, self.last_date()?))
    }

    fn entries_between(&self, from: NaiveDate, to: NaiveDate) -> Result<Vec<RecordEntry>, RecordError> {
        Ok(self.query_range(from, to)?.into_iter().cloned().collect())
    }
}

impl<T: RecordSource + ?Sized> RecordSource for std::sync::Arc<T> {
    fn date_bounds(&self) -> Option<(NaiveDate, NaiveDate)> {
        (**self).date_bounds()
    }
    fn entries_between(&self, from: NaiveDate, to: NaiveDate) -> Result<Vec<RecordEntry>, RecordError> {
        (**self).entries_between(from, to)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataAgentOutput {
    pub data_analysis: String,
    pub data_summary: String,
    pub data_brief: String,
    pub date_from: NaiveDate,
    pub date_to: NaiveDate,
    /// Dates actually present in the range.
    pub dates: Vec<NaiveDate>,
    /// True when the range came from the default window, not the question.
    pub default_window: bool,
    pub bullet_report: BulletReport,
    pub degraded: bool,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub problems: Vec<String>,
    /// Context handed to the model; kept for the synthesizer.
    #[serde(skip)]
    pub records_markdown: String,
}

#[derive(Deserialize)]
struct DataReply {
    data_analysis: String,
    data_summary: String,
    data_brief: String,
}

/// Most recent `days` days of the store, inclusive.
pub fn default_window(last: NaiveDate, days: u32) -> (NaiveDate, NaiveDate) {
    (last - Duration::days(i64::from(days.max(1)) - 1), last)
}

pub fn run_data_agent(
    rq: &RoutedQuery,
    store: &dyn RecordSource,
    llm: &dyn LlmClient,
    window_days: u32,
    log: &mut Vec<Exchange>,
) -> Result<DataAgentOutput, StageError> {
    const STAGE: &str = "data";
    if let Some(e) = &rq.date_error {
        return Err(StageError::new(STAGE, ErrorKind::InvalidInput, e));
    }
    let Some((_, last)) = store.date_bounds() else {
        return Err(StageError::new(STAGE, ErrorKind::NoRecords, "no records: the record store is empty"));
    };
    let (from, to, default) = match (rq.date_from, rq.date_to) {
        (Some(f), Some(t)) => (f, t, false),
        _ => {
            let (f, t) = default_window(last, window_days);
            (f, t, true)
        }
    };
    let entries = store
        .entries_between(from, to)
        .map_err(|e| StageError::new(STAGE, ErrorKind::InvalidInput, e))?;
    if entries.is_empty() {
        return Err(StageError::new(
            STAGE,
            ErrorKind::NoRecords,
            format!("no records between {from} and {to}"),
        ));
    }
    let context = render_markdown(&entries);
    let req = ChatRequest::new(Stage::Data, "", prompts::data_user(&context, &rq.data_query));
    let spec = BulletSpec::data_brief();
    let reply = call_json(llm, &req, log, |r: &DataReply| validate_bullets(&r.data_brief, &spec).summary())
        .map_err(|e| StageError::new(STAGE, ErrorKind::Llm, e))?;
    let Some(r) = reply.value else {
        return Err(StageError::new(
            STAGE,
            ErrorKind::Format,
            format!("unusable reply: {}", reply.problems.join("; ")),
        ));
    };
    Ok(DataAgentOutput {
        bullet_report: validate_bullets(&r.data_brief, &spec),
        data_analysis: r.data_analysis,
        data_summary: r.data_summary,
        data_brief: r.data_brief,
        date_from: from,
        date_to: to,
        dates: entries.iter().map(|e| e.date).collect(),
        default_window: default,
        degraded: !reply.problems.is_empty(),
        problems: reply.problems,
        records_markdown: context,
    })
}
