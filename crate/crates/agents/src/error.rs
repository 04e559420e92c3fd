use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    /// Bad question, dates or configuration.
    InvalidInput,
    /// The record store holds nothing for the requested range.
    NoRecords,
    /// The model could not be reached.
    Llm,
    /// The model answered but never in a usable form.
    Format,
    Retrieval,
}

/// Failure of one pipeline stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, thiserror::Error)]
#[error("{stage}: {message}")]
pub struct StageError {
    pub stage: String,
    pub kind: ErrorKind,
    pub message: String,
}

impl StageError {
    pub fn new(stage: impl Into<String>, kind: ErrorKind, message: impl ToString) -> Self {
        Self {
            stage: stage.into(),
            kind,
            message: message.to_string(),
        }
    }
}
