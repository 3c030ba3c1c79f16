use crate::error::{Error, Result};
use crate::text::collapse_whitespace;

/// One (past observation, hypothesis, future observation) triple.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AbductiveInstance {
    pub id: String,
    pub obs1: String,
    pub obs2: String,
    /// Reference hypotheses; may be empty at decode time.
    pub gold_hyps: Vec<String>,
}

impl AbductiveInstance {
    /// Whitespace-normalises every field; both observations must be nonempty.
    pub fn new(
        id: impl Into<String>,
        obs1: &str,
        obs2: &str,
        gold_hyps: impl IntoIterator<Item = String>,
    ) -> Result<Self> {
        let obs1 = collapse_whitespace(obs1);
        let obs2 = collapse_whitespace(obs2);
        if obs1.is_empty() || obs2.is_empty() {
            return Err(Error::Input("observations must be nonempty".into()));
        }
        Ok(Self {
            id: id.into(),
            obs1,
            obs2,
            gold_hyps: gold_hyps.into_iter().map(|h| collapse_whitespace(&h)).collect(),
        })
    }

    pub fn gold(&self) -> Option<&str> {
        self.gold_hyps.first().map(String::as_str)
    }
}
