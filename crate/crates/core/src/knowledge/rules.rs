use std::fs;
use std::path::Path;

use super::{KnowledgeProvider, Relation};
use crate::error::{Error, Result};
use crate::text;

/// Rule table shipped with the crate.
pub const DEFAULT_RULES: &str = include_str!("../../data/knowledge_rules.tsv");

#[derive(Debug, Clone, PartialEq)]
enum PatternWord {
    Literal(String),
    Capture,
}

#[derive(Debug, Clone, PartialEq)]
struct Rule {
    relation: Relation,
    /// Empty means "match anything".
    pattern: Vec<PatternWord>,
    template: String,
}

impl Rule {
    fn apply(&self, obs: &[String]) -> Option<String> {
        if self.pattern.is_empty() {
            return Some(self.template.clone());
        }
        let n = self.pattern.len();
        if obs.len() < n {
            return None;
        }
        (0..=obs.len() - n).find_map(|start| {
            let mut caps = Vec::new();
            for (pw, w) in self.pattern.iter().zip(&obs[start..start + n]) {
                match pw {
                    PatternWord::Literal(l) if l != w => return None,
                    PatternWord::Literal(_) => {}
                    PatternWord::Capture => caps.push(w.as_str()),
                }
            }
            let mut out = self.template.clone();
            for (i, c) in caps.iter().enumerate() {
                out = out.replace(&format!("{{{}}}", i + 1), c);
            }
            Some(out)
        })
    }
}

/// Deterministic rule-table stand-in for a learned commonsense model.
///
/// File format: `relation <TAB> pattern <TAB> inference-template`, `#`
/// comments, and a `#! rules-version N` header.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleTable {
    version: u32,
    rules: Vec<Rule>,
}

impl RuleTable {
    pub fn parse(src: &str, origin: &str) -> Result<Self> {
        let mut version = None;
        let mut rules = Vec::new();
        for (i, line) in src.lines().enumerate() {
            let err = |msg: String| Error::Parse {
                path: origin.to_string(),
                line: i + 1,
                msg,
            };
            if let Some(v) = line.strip_prefix("#! rules-version") {
                version = Some(v.trim().parse().map_err(|_| err(format!("bad version {v:?}")))?);
                continue;
            }
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(err(format!("expected 3 tab-separated columns, found {}", cols.len())));
            }
            let relation: Relation = cols[0].trim().parse().map_err(|e: Error| err(e.to_string()))?;
            let pattern = match cols[1].trim() {
                "_" => Vec::new(),
                p => text::words(p)
                    .into_iter()
                    .map(|w| {
                        if w == "*" {
                            PatternWord::Capture
                        } else {
                            PatternWord::Literal(w)
                        }
                    })
                    .collect(),
            };
            let template = text::collapse_whitespace(cols[2]);
            if template.is_empty() {
                return Err(err("empty inference template".into()));
            }
            rules.push(Rule {
                relation,
                pattern,
                template,
            });
        }
        let version = version.ok_or_else(|| Error::Parse {
            path: origin.to_string(),
            line: 1,
            msg: "missing `#! rules-version` header".into(),
        })?;
        Ok(Self { version, rules })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let src = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&src, &path.display().to_string())
    }

    pub fn version(&self) -> u32 {
        self.version
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    /// Every word a template can emit, excluding capture placeholders.
    pub fn template_words(&self) -> Vec<String> {
        let mut out: Vec<String> = Relation::ALL
            .iter()
            .flat_map(|r| text::words(r.generic_inference()))
            .collect();
        for r in &self.rules {
            out.extend(text::words(&r.template).into_iter().filter(|w| !w.starts_with('{')));
        }
        out
    }
}

impl Default for RuleTable {
    fn default() -> Self {
        Self::parse(DEFAULT_RULES, "knowledge_rules.tsv").expect("shipped rule table parses")
    }
}

impl KnowledgeProvider for RuleTable {
    fn name(&self) -> String {
        format!("rule-table-v{}", self.version)
    }

    fn infer_text(&self, observation: &str, relation: Relation) -> String {
        let obs = text::words(observation);
        self.rules
            .iter()
            .filter(|r| r.relation == relation)
            .find_map(|r| r.apply(&obs))
            .unwrap_or_else(|| relation.generic_inference().to_string())
    }
}
