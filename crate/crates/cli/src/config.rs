//! TOML configuration. Every section and field is optional.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context};
use bess_agents::embed::{Embedder, HttpEmbedder, MockEmbedder, MOCK_DIM};
use bess_agents::llm::{HttpLlm, HttpLlmConfig, LlmClient};
use bess_agents::{AgentConfig, MockLlm};
use bess_core::pipeline::PipelineParams;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provider {
    /// Offline deterministic stand-in.
    #[default]
    Mock,
    Http,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmSection {
    pub provider: Provider,
    #[serde(flatten)]
    pub http: HttpLlmConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedSection {
    pub provider: Provider,
    pub url: Option<String>,
    pub dim: usize,
    pub timeout_s: u64,
    pub max_in_flight: usize,
}

impl Default for EmbedSection {
    fn default() -> Self {
        Self {
            provider: Provider::Mock,
            url: None,
            dim: MOCK_DIM,
            timeout_s: 60,
            max_in_flight: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServerSection {
    pub bind: String,
    /// Origins allowed by CORS; empty disables the layer.
    pub cors_origins: Vec<String>,
    /// JSON-lines file each answered query is appended to.
    pub audit_log: Option<PathBuf>,
    pub request_timeout_s: u64,
}

impl Default for ServerSection {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            cors_origins: vec!["http://localhost:5173".into()],
            audit_log: None,
            request_timeout_s: 120,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub store_dir: PathBuf,
    /// Directory holding index.json, or the file itself.
    pub index_path: PathBuf,
    pub pipeline: PipelineParams,
    pub agent: AgentConfig,
    pub llm: LlmSection,
    pub embed: EmbedSection,
    pub server: ServerSection,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            store_dir: "data/records".into(),
            index_path: "data/index".into(),
            pipeline: PipelineParams::default(),
            agent: AgentConfig::default(),
            llm: LlmSection::default(),
            embed: EmbedSection::default(),
            server: ServerSection::default(),
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let c: Self = toml::from_str(text)?;
        c.pipeline.selection.validate()?;
        if c.agent.top_k == 0 {
            bail!("agent.top_k must be at least 1");
        }
        Ok(c)
    }

    /// Builds the chat client. HTTP clients must be created outside any
    /// async runtime.
    pub fn llm(&self) -> anyhow::Result<Arc<dyn LlmClient>> {
        Ok(match self.llm.provider {
            Provider::Mock => Arc::new(MockLlm::new()),
            Provider::Http => Arc::new(HttpLlm::new(self.llm.http.clone().with_env())?),
        })
    }

    pub fn embedder(&self) -> anyhow::Result<Arc<dyn Embedder>> {
        Ok(match self.embed.provider {
            Provider::Mock => Arc::new(MockEmbedder::new(self.embed.dim)),
            Provider::Http => {
                let url = std::env::var("EMBED_BASE_URL")
                    .ok()
                    .or_else(|| self.embed.url.clone())
                    .context("embed.provider is http but neither embed.url nor EMBED_BASE_URL is set")?;
                Arc::new(HttpEmbedder::new(
                    url,
                    self.embed.dim,
                    Duration::from_secs(self.embed.timeout_s),
                    self.embed.max_in_flight,
                )?)
            }
        })
    }
}
