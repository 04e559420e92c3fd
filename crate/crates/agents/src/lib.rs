//! Question answering over the battery record dataset and a knowledge base.
//!
//! A question is routed ([`router`]) to the data branch ([`data_agent`]),
//! the knowledge branch ([`knowledge_agent`] over [`knowledge`]) or both,
//! in which case the two run concurrently and [`synth`] merges them.
//! [`orchestrator::Orchestrator::answer`] drives the whole flow and keeps
//! every prompt, reply and stage timing in the answer's audit.
//!
//! Model access goes through [`llm::LlmClient`]; [`mock::MockLlm`] gives
//! deterministic offline answers. Structured replies are parsed by
//! [`jsonio`] and checked by [`validate`].

pub mod data_agent;
pub mod embed;
pub mod error;
pub mod jsonio;
pub mod knowledge;
pub mod knowledge_agent;
pub mod llm;
pub mod mock;
pub mod orchestrator;
pub mod prompts;
pub mod router;
pub mod synth;
pub mod validate;

/// Stage name to elapsed milliseconds.
pub type Timings = std::collections::BTreeMap<String, f64>;

pub use embed::{Embedder, MockEmbedder};
pub use error::{ErrorKind, StageError};
pub use knowledge::{KnowledgeIndex, KnowledgeSlice, RetrievalHit};
pub use llm::{ChatRequest, LlmClient, Stage};
pub use mock::MockLlm;
pub use orchestrator::{AgentConfig, FinalAnswer, Orchestrator};
pub use router::{Route, RoutedQuery};
pub use validate::{validate_bullets, BulletReport, BulletSpec};
