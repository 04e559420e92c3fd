//! Structural checks on Markdown bullet answers.
//!
//! Only the mechanically checkable rules: bullet marker, count, words per
//! bullet, one sentence per bullet, section prefixes and provenance tags.
//! Word counts skip the `- ` marker, a leading prefix label and the trailing
//! tag.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

pub const TAGS: [&str; 3] = ["[RAG][LLM]", "[RAG]", "[LLM]"];
pub const KNOWLEDGE_PREFIXES: [&str; 3] = ["[Mechanism]", "[Cause]", "[Mitigation]"];
pub const SYNTHESIS_PREFIXES: [&str; 3] = ["[Data]", "[Knowledge]", "[Integrated]"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TagMode {
    /// Every bullet ends with exactly one provenance tag.
    Required,
    /// Tags may appear but are not checked.
    Optional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefixRule {
    pub label: String,
    pub min: usize,
    pub max: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BulletSpec {
    pub min: usize,
    pub max: usize,
    /// Bullets must have strictly fewer words than this.
    pub word_limit: usize,
    pub tags: TagMode,
    /// Empty means no prefix rule. Otherwise every bullet starts with one of
    /// the labels and each label's count stays in its range.
    pub prefixes: Vec<PrefixRule>,
}

impl BulletSpec {
    pub fn new(min: usize, max: usize, word_limit: usize, tags: TagMode) -> Self {
        Self {
            min,
            max,
            word_limit,
            tags,
            prefixes: Vec::new(),
        }
    }

    pub fn with_prefixes(mut self, labels: &[&str], min: usize, max: usize) -> Self {
        self.prefixes = labels
            .iter()
            .map(|l| PrefixRule {
                label: l.to_string(),
                min,
                max,
            })
            .collect();
        self
    }

    /// On-site brief from the data agent: 3-5 bullets, tags optional.
    pub fn data_brief() -> Self {
        Self::new(3, 5, 25, TagMode::Optional)
    }

    /// Knowledge summary: 3-6 tagged bullets, 1-2 per section.
    pub fn knowledge_summary() -> Self {
        Self::new(3, 6, 25, TagMode::Required).with_prefixes(&KNOWLEDGE_PREFIXES, 1, 2)
    }

    /// Final synthesis: 3-5 tagged bullets with a source prefix each.
    pub fn synthesis() -> Self {
        Self::new(3, 5, 25, TagMode::Required).with_prefixes(&SYNTHESIS_PREFIXES, 0, 5)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    /// A non-empty line that is not a `- ` bullet.
    Format,
    Count,
    Empty,
    WordLimit,
    SingleSentence,
    Tag,
    Prefix,
    PrefixCount,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    /// Bullet (or line, for `format`) index; `None` for whole-list rules.
    pub index: Option<usize>,
    pub rule: Rule,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BulletReport {
    pub valid: bool,
    pub bullet_count: usize,
    pub violations: Vec<Violation>,
}

impl BulletReport {
    pub fn summary(&self) -> Vec<String> {
        self.violations
            .iter()
            .map(|v| match v.index {
                Some(i) => format!("bullet {}: {:?}: {}", i + 1, v.rule, v.detail),
                None => format!("{:?}: {}", v.rule, v.detail),
            })
            .collect()
    }
}

/// Bullet texts without the `- ` marker. Non-bullet lines are dropped.
pub fn bullets(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter_map(|l| l.strip_prefix("- "))
        .map(|b| b.trim().to_string())
        .collect()
}

static SENTENCE_BREAK: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[.!?]\s+[A-Z0-9\[]").expect("regex"));

/// Splits a bullet into (prefix label, content, terminal tag).
pub fn split_bullet(bullet: &str) -> (Option<&'static str>, &str, Option<&'static str>) {
    let mut rest = bullet.trim();
    let mut prefix = None;
    for label in KNOWLEDGE_PREFIXES.iter().chain(&SYNTHESIS_PREFIXES) {
        if let Some(r) = rest.strip_prefix(label) {
            prefix = Some(*label);
            rest = r.trim_start();
            break;
        }
    }
    let mut tag = None;
    for t in TAGS {
        if let Some(r) = rest.strip_suffix(t) {
            tag = Some(t);
            rest = r.trim_end();
            break;
        }
    }
    (prefix, rest, tag)
}

pub fn word_count(bullet: &str) -> usize {
    split_bullet(bullet).1.split_whitespace().count()
}

/// Checks `text` against `spec`. Total: never fails, lists every problem.
pub fn validate_bullets(text: &str, spec: &BulletSpec) -> BulletReport {
    let mut violations = Vec::new();
    let mut items = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        match line.strip_prefix("- ") {
            Some(b) => items.push(b.trim()),
            None => violations.push(Violation {
                index: Some(line_no),
                rule: Rule::Format,
                detail: format!("line is not a '- ' bullet: {line:?}"),
            }),
        }
    }
    let n = items.len();
    if n < spec.min || n > spec.max {
        violations.push(Violation {
            index: None,
            rule: Rule::Count,
            detail: format!("{n} bullets, expected {}-{}", spec.min, spec.max),
        });
    }

    let mut prefix_counts = vec![0usize; spec.prefixes.len()];
    for (i, item) in items.iter().enumerate() {
        let (prefix, content, tag) = split_bullet(item);
        let words = content.split_whitespace().count();
        if words == 0 {
            violations.push(Violation {
                index: Some(i),
                rule: Rule::Empty,
                detail: "bullet has no content".into(),
            });
        }
        if words >= spec.word_limit {
            violations.push(Violation {
                index: Some(i),
                rule: Rule::WordLimit,
                detail: format!("{words} words, limit is fewer than {}", spec.word_limit),
            });
        }
        if SENTENCE_BREAK.is_match(content) {
            violations.push(Violation {
                index: Some(i),
                rule: Rule::SingleSentence,
                detail: "more than one sentence".into(),
            });
        }
        if spec.tags == TagMode::Required {
            if tag.is_none() {
                violations.push(Violation {
                    index: Some(i),
                    rule: Rule::Tag,
                    detail: "missing terminal tag [RAG], [LLM] or [RAG][LLM]".into(),
                });
            }
            if content.contains("[RAG]") || content.contains("[LLM]") {
                violations.push(Violation {
                    index: Some(i),
                    rule: Rule::Tag,
                    detail: "more than one tag".into(),
                });
            }
        }
        if !spec.prefixes.is_empty() {
            match prefix.and_then(|p| spec.prefixes.iter().position(|r| r.label == p)) {
                Some(k) => prefix_counts[k] += 1,
                None => {
                    let allowed: Vec<&str> = spec.prefixes.iter().map(|r| r.label.as_str()).collect();
                    violations.push(Violation {
                        index: Some(i),
                        rule: Rule::Prefix,
                        detail: format!("must start with one of {}", allowed.join(", ")),
                    })
                }
            }
        }
    }
    for (rule, &count) in spec.prefixes.iter().zip(&prefix_counts) {
        if count < rule.min || count > rule.max {
            violations.push(Violation {
                index: None,
                rule: Rule::PrefixCount,
                detail: format!("{count} bullets start with {}, expected {}-{}", rule.label, rule.min, rule.max),
            });
        }
    }
    BulletReport {
        valid: violations.is_empty(),
        bullet_count: n,
        violations,
    }
}
