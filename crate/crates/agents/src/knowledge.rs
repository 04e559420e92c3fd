//! Knowledge slices, the key-embedding index and max-fusion retrieval.
//!
//! A corpus is a directory of Markdown files. Each heading opens a slice:
//! the heading text is the key, the paragraphs below it are the body. Only
//! keys are embedded. Retrieval embeds every sub-query, scores each slice by
//! its best cosine similarity over the sub-queries and keeps the top k, ties
//! going to the smaller slice id. The scan is exact.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::embed::{dot, normalize, EmbedError, Embedder};
use crate::jsonio::{call_json, Exchange};
use crate::llm::{ChatRequest, LlmClient, Stage};
use crate::prompts;

pub const INDEX_FILE: &str = "index.json";
pub const DEFAULT_TOP_K: usize = 5;
/// Body lengths outside this word range draw a warning.
pub const BODY_WORDS: (usize, usize) = (40, 200);
const EMBED_BATCH: usize = 32;

#[derive(Debug, thiserror::Error)]
pub enum KbError {
    #[error("{source_name}: no Markdown headings found")]
    NoHeadings { source_name: String },
    #[error("knowledge index is empty")]
    EmptyIndex,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("no queries given")]
    NoQueries,
    #[error("question is empty")]
    EmptyQuestion,
    #[error("duplicate slice id {0}")]
    DuplicateId(String),
    #[error("index was built with {index}, queries use {embedder}")]
    Fingerprint { index: String, embedder: String },
    #[error("index is inconsistent: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeSlice {
    pub id: String,
    /// One-sentence semantic title; the embedded text.
    pub key: String,
    pub body: String,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub source: String,
    pub line: usize,
    pub message: String,
}

static HEADING: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^#{1,6}\s+(.+?)\s*#*\s*$").expect("regex"));

/// Splits Markdown into slices. Ids are `<stem>-<nn>` with `nn` the heading
/// ordinal in the file. A `Source:` line inside a body sets the citation;
/// otherwise the file name is used.
pub fn parse_slices(markdown: &str, source: &str) -> Result<(Vec<KnowledgeSlice>, Vec<Diagnostic>), KbError> {
    let stem = Path::new(source)
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or(source)
        .to_string();
    let diag = |line: usize, message: String| Diagnostic {
        source: source.to_string(),
        line,
        message,
    };

    struct Open {
        line: usize,
        key: String,
        paragraphs: Vec<String>,
        current: Vec<String>,
        citation: Option<String>,
    }
    let mut slices = Vec::new();
    let mut diagnostics = Vec::new();
    let mut open: Option<Open> = None;
    let mut ordinal = 0;
    let mut preamble = false;

    let close = |o: Open, ordinal: usize, slices: &mut Vec<KnowledgeSlice>, diagnostics: &mut Vec<Diagnostic>| {
        let mut paragraphs = o.paragraphs;
        if !o.current.is_empty() {
            paragraphs.push(o.current.join(" "));
        }
        let body = paragraphs.join("\n\n");
        if body.is_empty() {
            diagnostics.push(diag(o.line, format!("slice {:?} has no body; skipped", o.key)));
            return;
        }
        let words = body.split_whitespace().count();
        if words < BODY_WORDS.0 || words > BODY_WORDS.1 {
            diagnostics.push(diag(
                o.line,
                format!("slice {:?} body has {words} words (expected about 80-120)", o.key),
            ));
        }
        slices.push(KnowledgeSlice {
            id: format!("{stem}-{ordinal:02}"),
            key: o.key,
            body,
            source: o.citation.unwrap_or_else(|| source.to_string()),
        });
    };

    for (i, raw) in markdown.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if let Some(c) = HEADING.captures(line) {
            if let Some(o) = open.take() {
                close(o, ordinal, &mut slices, &mut diagnostics);
            }
            ordinal += 1;
            open = Some(Open {
                line: line_no,
                key: c[1].to_string(),
                paragraphs: Vec::new(),
                current: Vec::new(),
                citation: None,
            });
            continue;
        }
        match open.as_mut() {
            None => {
                if !line.is_empty() && !preamble {
                    preamble = true;
                    diagnostics.push(diag(line_no, "text before the first heading ignored".into()));
                }
            }
            Some(o) => {
                if let Some(c) = line.strip_prefix("Source:") {
                    o.citation = Some(c.trim().to_string());
                } else if line.is_empty() {
                    if !o.current.is_empty() {
                        o.paragraphs.push(o.current.join(" "));
                        o.current.clear();
                    }
                } else {
                    o.current.push(line.to_string());
                }
            }
        }
    }
    if let Some(o) = open.take() {
        close(o, ordinal, &mut slices, &mut diagnostics);
    }
    if ordinal == 0 {
        return Err(KbError::NoHeadings {
            source_name: source.to_string(),
        });
    }
    Ok((slices, diagnostics))
}

/// Parses every `*.md` file of a directory, in file-name order.
pub fn load_corpus(dir: impl AsRef<Path>) -> Result<(Vec<KnowledgeSlice>, Vec<Diagnostic>), KbError> {
    let dir = dir.as_ref();
    let io = |path: &Path, source| KbError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "md"))
        .collect();
    files.sort();
    let mut slices = Vec::new();
    let mut diagnostics = Vec::new();
    for path in files {
        let text = fs::read_to_string(&path).map_err(|e| io(&path, e))?;
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        let (s, d) = parse_slices(&text, name)?;
        slices.extend(s);
        diagnostics.extend(d);
    }
    Ok((slices, diagnostics))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeIndex {
    pub dim: usize,
    pub fingerprint: String,
    pub slices: Vec<KnowledgeSlice>,
    /// Unit-length key embeddings, parallel to `slices`.
    pub vectors: Vec<Vec<f64>>,
}

impl KnowledgeIndex {
    pub fn empty(embedder: &dyn Embedder) -> Self {
        Self {
            dim: embedder.dim(),
            fingerprint: embedder.fingerprint(),
            slices: Vec::new(),
            vectors: Vec::new(),
        }
    }

    pub fn build(slices: Vec<KnowledgeSlice>, embedder: &dyn Embedder) -> Result<Self, KbError> {
        let mut ids: Vec<&str> = slices.iter().map(|s| s.id.as_str()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(KbError::DuplicateId(w[0].to_string()));
        }
        let keys: Vec<String> = slices.iter().map(|s| s.key.clone()).collect();
        let mut vectors = Vec::with_capacity(keys.len());
        for chunk in keys.chunks(EMBED_BATCH) {
            vectors.extend(embedder.embed(chunk)?);
        }
        let index = Self {
            dim: embedder.dim(),
            fingerprint: embedder.fingerprint(),
            slices,
            vectors,
        };
        index.check()?;
        Ok(index)
    }

    fn check(&self) -> Result<(), KbError> {
        if self.slices.len() != self.vectors.len() {
            return Err(KbError::Corrupt(format!(
                "{} slices but {} vectors",
                self.slices.len(),
                self.vectors.len()
            )));
        }
        for (s, v) in self.slices.iter().zip(&self.vectors) {
            let norm = dot(v, v).sqrt();
            if v.len() != self.dim || (norm - 1.0).abs() > 1e-6 {
                return Err(KbError::Corrupt(format!("vector of {} has dim {} and norm {norm}", s.id, v.len())));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&KnowledgeSlice> {
        self.slices.iter().find(|s| s.id == id)
    }

    /// Writes `<dir>/index.json`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<PathBuf, KbError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|source| KbError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let path = dir.join(INDEX_FILE);
        let mut text = serde_json::to_string_pretty(self).map_err(|source| KbError::Json {
            path: path.clone(),
            source,
        })?;
        text.push('\n');
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, text)
            .and_then(|_| fs::rename(&tmp, &path))
            .map_err(|source| KbError::Io {
                path: path.clone(),
                source,
            })?;
        Ok(path)
    }

    /// Reads an index from a directory holding `index.json`, or from the
    /// file itself.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, KbError> {
        let mut path = path.as_ref().to_path_buf();
        if path.is_dir() {
            path = path.join(INDEX_FILE);
        }
        let text = fs::read_to_string(&path).map_err(|source| KbError::Io {
            path: path.clone(),
            source,
        })?;
        let index: Self = serde_json::from_str(&text).map_err(|source| KbError::Json { path, source })?;
        index.check()?;
        Ok(index)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub slice_id: String,
    /// Best cosine similarity over the sub-queries, in [-1, 1].
    pub fused_score: f64,
    /// First sub-query reaching that score.
    pub best_query_index: usize,
}

/// Max-fusion top-k over already embedded, unit-length queries.
pub fn fuse_topk(queries: &[Vec<f64>], index: &KnowledgeIndex, k: usize) -> Result<Vec<RetrievalHit>, KbError> {
    if k == 0 {
        return Err(KbError::ZeroK);
    }
    if queries.is_empty() {
        return Err(KbError::NoQueries);
    }
    if index.is_empty() {
        return Err(KbError::EmptyIndex);
    }
    let mut hits: Vec<RetrievalHit> = index
        .slices
        .iter()
        .zip(&index.vectors)
        .map(|(slice, d)| {
            let mut best = f64::NEG_INFINITY;
            let mut best_i = 0;
            for (i, q) in queries.iter().enumerate() {
                let sim = dot(q, d).clamp(-1.0, 1.0);
                if sim > best {
                    best = sim;
                    best_i = i;
                }
            }
            RetrievalHit {
                slice_id: slice.id.clone(),
                fused_score: best,
                best_query_index: best_i,
            }
        })
        .collect();
    hits.sort_by(|a, b| b.fused_score.total_cmp(&a.fused_score).then_with(|| a.slice_id.cmp(&b.slice_id)));
    hits.truncate(k);
    Ok(hits)
}

/// Embeds `queries` and runs [`fuse_topk`].
pub fn retrieve_topk(
    queries: &[String],
    index: &KnowledgeIndex,
    embedder: &dyn Embedder,
    k: usize,
) -> Result<Vec<RetrievalHit>, KbError> {
    if k == 0 {
        return Err(KbError::ZeroK);
    }
    if queries.is_empty() {
        return Err(KbError::NoQueries);
    }
    if index.is_empty() {
        return Err(KbError::EmptyIndex);
    }
    if embedder.fingerprint() != index.fingerprint {
        return Err(KbError::Fingerprint {
            index: index.fingerprint.clone(),
            embedder: embedder.fingerprint(),
        });
    }
    let vecs = embedder.embed(queries)?;
    let vecs: Vec<Vec<f64>> = vecs
        .into_iter()
        .enumerate()
        .map(|(i, v)| normalize(v).ok_or(EmbedError::Degenerate(i)))
        .collect::<Result<_, _>>()?;
    fuse_topk(&vecs, index, k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Expansion {
    pub queries: Vec<String>,
    pub degraded: bool,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub problems: Vec<String>,
}

#[derive(Deserialize)]
struct ExpandReply {
    queries: Vec<String>,
}

/// Asks the model for `n` sub-queries. With `include_original` the question
/// itself is appended. Any failure falls back to the question alone.
pub fn expand_query(
    question: &str,
    llm: &dyn LlmClient,
    n: usize,
    include_original: bool,
    log: &mut Vec<Exchange>,
) -> Result<Expansion, KbError> {
    let question = question.trim();
    if question.is_empty() {
        return Err(KbError::EmptyQuestion);
    }
    let fallback = |problems: Vec<String>| Expansion {
        queries: vec![question.to_string()],
        degraded: true,
        problems,
    };
    let req = ChatRequest::new(Stage::Expand, prompts::expand_system(n), question);
    let check = |r: &ExpandReply| {
        let mut p = Vec::new();
        if r.queries.len() != n {
            p.push(format!("expected {n} queries, got {}", r.queries.len()));
        }
        if r.queries.iter().any(|q| q.trim().is_empty()) {
            p.push("empty query".into());
        }
        p
    };
    let reply = match call_json(llm, &req, log, check) {
        Ok(r) => r,
        Err(e) => return Ok(fallback(vec![e.to_string()])),
    };
    match reply.value {
        Some(r) if reply.problems.is_empty() => {
            let mut queries: Vec<String> = r.queries.iter().map(|q| q.trim().to_string()).collect();
            if include_original {
                queries.push(question.to_string());
            }
            Ok(Expansion {
                queries,
                degraded: false,
                problems: Vec::new(),
            })
        }
        _ => Ok(fallback(reply.problems)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::MockEmbedder;
    use crate::llm::ScriptedLlm;

    const TWO: &str = "# First key sentence\n\nBody one line.\nContinues here.\n\nSecond paragraph.\n\n## Second key\nBody two.\nSource: Review 2024\n";

    #[test]
    fn two_headings_two_slices() {
        let (s, d) = parse_slices(TWO, "cells.md").unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].id, "cells-01");
        assert_eq!(s[0].key, "First key sentence");
        assert_eq!(s[0].body, "Body one line. Continues here.\n\nSecond paragraph.");
        assert_eq!(s[0].source, "cells.md");
        assert_eq!(s[1].source, "Review 2024");
        // Both bodies are short.
        assert_eq!(d.len(), 2);
        assert!(d[0].message.contains("words"));
    }

    #[test]
    fn heading_without_body_is_skipped() {
        let (s, d) = parse_slices("# Empty\n\n# Full\ntext\n", "x.md").unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].id, "x-02");
        assert!(d.iter().any(|d| d.message.contains("no body") && d.line == 1));
    }

    #[test]
    fn no_headings_is_an_error() {
        assert!(matches!(parse_slices("plain text\n", "x.md"), Err(KbError::NoHeadings { .. })));
    }

    fn index(keys: &[&str]) -> KnowledgeIndex {
        let slices = keys
            .iter()
            .enumerate()
            .map(|(i, k)| KnowledgeSlice {
                id: format!("s-{i:02}"),
                key: k.to_string(),
                body: "b".into(),
                source: "t".into(),
            })
            .collect();
        KnowledgeIndex::build(slices, &MockEmbedder::default()).unwrap()
    }

    #[test]
    fn key_text_retrieves_itself() {
        let idx = index(&["thermal gradients accelerate aging", "balancing current limits", "busbar resistance"]);
        let e = MockEmbedder::default();
        let hits = retrieve_topk(&["busbar resistance".into()], &idx, &e, 5).unwrap();
        assert_eq!(hits[0].slice_id, "s-02");
        assert!((hits[0].fused_score - 1.0).abs() < 1e-6);
        assert_eq!(hits.len(), 3);
    }

    #[test]
    fn precondition_errors() {
        let e = MockEmbedder::default();
        let idx = index(&["a"]);
        assert!(matches!(retrieve_topk(&["a".into()], &idx, &e, 0), Err(KbError::ZeroK)));
        assert!(matches!(retrieve_topk(&[], &idx, &e, 1), Err(KbError::NoQueries)));
        let empty = KnowledgeIndex::empty(&e);
        assert!(matches!(retrieve_topk(&["a".into()], &empty, &e, 1), Err(KbError::EmptyIndex)));
        let other = MockEmbedder::new(8);
        assert!(matches!(retrieve_topk(&["a".into()], &idx, &other, 1), Err(KbError::Fingerprint { .. })));
    }

    #[test]
    fn ties_go_to_smaller_id() {
        let idx = index(&["same key", "other", "same key"]);
        let hits = retrieve_topk(&["same key".into()], &idx, &MockEmbedder::default(), 2).unwrap();
        assert_eq!(hits[0].slice_id, "s-00");
        assert_eq!(hits[1].slice_id, "s-02");
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let idx = index(&["a b", "c d"]);
        idx.save(dir.path()).unwrap();
        assert_eq!(KnowledgeIndex::load(dir.path()).unwrap(), idx);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let s = KnowledgeSlice {
            id: "x".into(),
            key: "k".into(),
            body: "b".into(),
            source: "s".into(),
        };
        let r = KnowledgeIndex::build(vec![s.clone(), s], &MockEmbedder::default());
        assert!(matches!(r, Err(KbError::DuplicateId(_))));
    }

    #[test]
    fn expansion_appends_question() {
        let llm = ScriptedLlm::new().reply(Stage::Expand, r#"{"queries": ["a", "b", "c"]}"#);
        let mut log = Vec::new();
        let e = expand_query("why?", &llm, 3, true, &mut log).unwrap();
        assert_eq!(e.queries, vec!["a", "b", "c", "why?"]);
        assert!(!e.degraded);
    }

    #[test]
    fn malformed_expansion_falls_back() {
        let llm = ScriptedLlm::new()
            .reply(Stage::Expand, r#"["a", "b", "c"]"#)
            .reply(Stage::Expand, r#"{"queries": ["only one"]}"#);
        let mut log = Vec::new();
        let e = expand_query("why?", &llm, 3, true, &mut log).unwrap();
        assert_eq!(e.queries, vec!["why?"]);
        assert!(e.degraded);
        assert_eq!(log.len(), 2);
        assert!(matches!(expand_query("  ", &llm, 3, true, &mut log), Err(KbError::EmptyQuestion)));
    }
}
