//! Commonsense-inference provider and the 18-entry knowledge bundle
//! (nine relations for each of the two observations).

mod relation;
mod rules;

use ndarray::{Array1, Axis};

pub use relation::Relation;
pub use rules::{RuleTable, DEFAULT_RULES};

use crate::data::tokenize;
use crate::lm::{LmParams, Vocabulary};

/// Number of bundle entries: nine relations for each observation.
pub const BUNDLE_SIZE: usize = 2 * Relation::COUNT;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Past,
    Future,
}

/// Source of relation-conditioned inferences. Implementations must be
/// deterministic.
pub trait KnowledgeProvider: Send + Sync {
    fn name(&self) -> String;

    fn infer_text(&self, observation: &str, relation: Relation) -> String;

    /// Mean-pooled final hidden state of the LM over the inference text.
    fn infer_embedding(
        &self,
        observation: &str,
        relation: Relation,
        params: &LmParams,
        vocab: &Vocabulary,
    ) -> Array1<f64> {
        embed_text(&self.infer_text(observation, relation), params, vocab)
    }
}

/// Mean of the last-block hidden states over the tokens of `text`
/// (truncated to the model's maximum length).
pub fn embed_text(text: &str, params: &LmParams, vocab: &Vocabulary) -> Array1<f64> {
    let mut ids = tokenize(vocab, text);
    if ids.is_empty() {
        ids.push(vocab.specials().unk);
    }
    ids.truncate(params.config.max_len);
    let hidden = params
        .hidden_states(&ids)
        .expect("ids come from the model's vocabulary and fit max_len");
    hidden.mean_axis(Axis(0)).expect("non-empty")
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeEntry {
    pub slot: Slot,
    pub relation: Relation,
    pub text: String,
    pub vector: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeBundle {
    pub provider: String,
    entries: Vec<KnowledgeEntry>,
}

impl KnowledgeBundle {
    /// Past-observation relations first, each in [`Relation::ALL`] order.
    pub fn build(
        provider: &dyn KnowledgeProvider,
        obs1: &str,
        obs2: &str,
        params: &LmParams,
        vocab: &Vocabulary,
    ) -> Self {
        let entries = [(Slot::Past, obs1), (Slot::Future, obs2)]
            .into_iter()
            .flat_map(|(slot, obs)| Relation::ALL.into_iter().map(move |relation| (slot, obs, relation)))
            .map(|(slot, obs, relation)| KnowledgeEntry {
                slot,
                relation,
                text: provider.infer_text(obs, relation),
                vector: provider.infer_embedding(obs, relation, params, vocab),
            })
            .collect();
        Self {
            provider: provider.name(),
            entries,
        }
    }

    pub fn entries(&self) -> &[KnowledgeEntry] {
        &self.entries
    }

    pub fn vectors(&self) -> Vec<Array1<f64>> {
        self.entries.iter().map(|e| e.vector.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
