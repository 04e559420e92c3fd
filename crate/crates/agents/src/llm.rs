//! Chat-completion clients.
//!
//! Every agent talks to the model through [`LlmClient`]: one system message,
//! one user message, temperature 0, plain text back. [`HttpLlm`] speaks the
//! OpenAI-compatible `/chat/completions` protocol; [`crate::mock::MockLlm`],
//! [`ScriptedLlm`] and [`RecordingLlm`] keep tests hermetic.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

/// Pipeline step a request belongs to. Real models ignore it; mocks key
/// their behaviour on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Route,
    Data,
    Expand,
    Expert,
    Integrate,
    Synthesize,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Route => "route",
            Stage::Data => "data",
            Stage::Expand => "expand",
            Stage::Expert => "expert",
            Stage::Integrate => "integrate",
            Stage::Synthesize => "synthesize",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub stage: Stage,
    pub system: String,
    pub user: String,
    pub temperature: f64,
}

impl ChatRequest {
    pub fn new(stage: Stage, system: impl Into<String>, user: impl Into<String>) -> Self {
        Self {
            stage,
            system: system.into(),
            user: user.into(),
            temperature: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LlmError {
    #[error("LLM request failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("LLM endpoint returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed LLM response: {0}")]
    Response(String),
    #[error("no scripted response left for stage {0}")]
    Exhausted(Stage),
    #[error("injected failure: {0}")]
    Injected(String),
}

pub trait LlmClient: Send + Sync {
    fn chat(&self, req: &ChatRequest) -> Result<String, LlmError>;

    /// Short provider label for health reports.
    fn describe(&self) -> String;
}

impl<T: LlmClient + ?Sized> LlmClient for std::sync::Arc<T> {
    fn chat(&self, req: &ChatRequest) -> Result<String, LlmError> {
        (**self).chat(req)
    }
    fn describe(&self) -> String {
        (**self).describe()
    }
}

impl<T: LlmClient + ?Sized> LlmClient for Box<T> {
    fn chat(&self, req: &ChatRequest) -> Result<String, LlmError> {
        (**self).chat(req)
    }
    fn describe(&self) -> String {
        (**self).describe()
    }
}

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
pub struct Limiter {
    max: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

pub struct Permit<'a>(&'a Limiter);

impl Limiter {
    pub fn new(max: usize) -> Self {
        Self {
            max: max.max(1),
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        while *n >= self.max {
            n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n += 1;
        Permit(self)
    }

    pub fn in_flight(&self) -> usize {
        *self.in_flight.lock().unwrap_or_else(|e| e.into_inner())
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        *n -= 1;
        self.0.freed.notify_one();
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpLlmConfig {
    pub base_url: String,
    pub model: String,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub timeout_s: u64,
    /// Extra attempts after a transport error or 5xx/429 reply.
    pub max_retries: u32,
    pub max_in_flight: usize,
}

impl Default for HttpLlmConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000/v1".into(),
            model: "gpt-4o-mini".into(),
            api_key: None,
            timeout_s: 60,
            max_retries: 2,
            max_in_flight: 8,
        }
    }
}

impl HttpLlmConfig {
    /// Overrides base URL, model and key from `LLM_BASE_URL`, `LLM_MODEL`
    /// and `LLM_API_KEY` when set.
    pub fn with_env(mut self) -> Self {
        if let Ok(v) = std::env::var("LLM_BASE_URL") {
            self.base_url = v;
        }
        if let Ok(v) = std::env::var("LLM_MODEL") {
            self.model = v;
        }
        if let Ok(v) = std::env::var("LLM_API_KEY") {
            self.api_key = Some(v);
        }
        self
    }
}

/// OpenAI-compatible chat client. Build it outside any async runtime: the
/// blocking reqwest client owns its own.
pub struct HttpLlm {
    config: HttpLlmConfig,
    client: reqwest::blocking::Client,
    limiter: Limiter,
}

impl HttpLlm {
    pub fn new(config: HttpLlmConfig) -> Result<Self, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_s))
            .build()
            .map_err(|e| LlmError::Transport {
                attempts: 0,
                message: e.to_string(),
            })?;
        Ok(Self {
            limiter: Limiter::new(config.max_in_flight),
            config,
            client,
        })
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    fn body(&self, req: &ChatRequest) -> serde_json::Value {
        let mut messages = Vec::new();
        if !req.system.is_empty() {
            messages.push(json!({"role": "system", "content": req.system}));
        }
        messages.push(json!({"role": "user", "content": req.user}));
        json!({
            "model": self.config.model,
            "temperature": req.temperature,
            "messages": messages,
        })
    }
}

#[derive(Deserialize)]
struct Completion {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    content: Option<String>,
}

impl LlmClient for HttpLlm {
    fn chat(&self, req: &ChatRequest) -> Result<String, LlmError> {
        let _permit = self.limiter.acquire();
        let body = self.body(req);
        let attempts = self.config.max_retries + 1;
        let mut last = String::new();
        for attempt in 1..=attempts {
            if attempt > 1 {
                std::thread::sleep(Duration::from_millis(250 * u64::from(attempt - 1)));
            }
            let mut rb = self.client.post(self.url()).json(&body);
            if let Some(key) = &self.config.api_key {
                rb = rb.bearer_auth(key);
            }
            let resp = match rb.send() {
                Ok(r) => r,
                Err(e) => {
                    tracing::warn!(stage = %req.stage, attempt, "LLM transport error: {e}");
                    last = e.to_string();
                    continue;
                }
            };
            let status = resp.status();
            let text = resp.text().map_err(|e| LlmError::Response(e.to_string()))?;
            if status.is_server_error() || status.as_u16() == 429 {
                tracing::warn!(stage = %req.stage, attempt, "LLM endpoint returned {status}");
                last = format!("HTTP {}: {}", status.as_u16(), truncate(&text, 200));
                continue;
            }
            if !status.is_success() {
                return Err(LlmError::Status {
                    status: status.as_u16(),
                    body: truncate(&text, 500),
                });
            }
            let completion: Completion = serde_json::from_str(&text).map_err(|e| LlmError::Response(e.to_string()))?;
            return completion
                .choices
                .into_iter()
                .next()
                .and_then(|c| c.message.content)
                .ok_or_else(|| LlmError::Response("no message content".into()));
        }
        Err(LlmError::Transport { attempts, message: last })
    }

    fn describe(&self) -> String {
        format!("http {} ({})", self.config.base_url, self.config.model)
    }
}

fn truncate(s: &str, max: usize) -> String {
    match s.char_indices().nth(max) {
        Some((i, _)) => format!("{}…", &s[..i]),
        None => s.to_string(),
    }
}

type Reply = Result<String, String>;

/// Replays canned replies per stage, in order. Stages without a script go
/// to the fallback client when one is set.
pub struct ScriptedLlm {
    script: Mutex<HashMap<Stage, VecDeque<Reply>>>,
    fallback: Option<Box<dyn LlmClient>>,
}

impl ScriptedLlm {
    pub fn new() -> Self {
        Self {
            script: Mutex::new(HashMap::new()),
            fallback: None,
        }
    }

    pub fn with_fallback(fallback: impl LlmClient + 'static) -> Self {
        Self {
            script: Mutex::new(HashMap::new()),
            fallback: Some(Box::new(fallback)),
        }
    }

    pub fn reply(self, stage: Stage, text: impl Into<String>) -> Self {
        self.push(stage, Ok(text.into()))
    }

    /// Queues a transport failure.
    pub fn fail(self, stage: Stage, message: impl Into<String>) -> Self {
        self.push(stage, Err(message.into()))
    }

    fn push(self, stage: Stage, reply: Reply) -> Self {
        self.script.lock().expect("script lock").entry(stage).or_default().push_back(reply);
        self
    }
}

impl Default for ScriptedLlm {
    fn default() -> Self {
        Self::new()
    }
}

impl LlmClient for ScriptedLlm {
    fn chat(&self, req: &ChatRequest) -> Result<String, LlmError> {
        let next = self
            .script
            .lock()
            .expect("script lock")
            .get_mut(&req.stage)
            .and_then(|q| q.pop_front());
        match (next, &self.fallback) {
            (Some(Ok(text)), _) => Ok(text),
            (Some(Err(msg)), _) => Err(LlmError::Injected(msg)),
            (None, Some(f)) => f.chat(req),
            (None, None) => Err(LlmError::Exhausted(req.stage)),
        }
    }

    fn describe(&self) -> String {
        "scripted".into()
    }
}

/// Wraps a client and keeps every request it forwards.
pub struct RecordingLlm<L> {
    inner: L,
    calls: Mutex<Vec<ChatRequest>>,
}

impl<L: LlmClient> RecordingLlm<L> {
    pub fn new(inner: L) -> Self {
        Self {
            inner,
            calls: Mutex::new(Vec::new()),
        }
    }

    pub fn calls(&self) -> Vec<ChatRequest> {
        self.calls.lock().expect("calls lock").clone()
    }

    pub fn stages(&self) -> Vec<Stage> {
        self.calls().iter().map(|c| c.stage).collect()
    }

    pub fn count(&self, stage: Stage) -> usize {
        self.calls().iter().filter(|c| c.stage == stage).count()
    }
}

impl<L: LlmClient> LlmClient for RecordingLlm<L> {
    fn chat(&self, req: &ChatRequest) -> Result<String, LlmError> {
        self.calls.lock().expect("calls lock").push(req.clone());
        self.inner.chat(req)
    }

    fn describe(&self) -> String {
        format!("recording {}", self.inner.describe())
    }
}
