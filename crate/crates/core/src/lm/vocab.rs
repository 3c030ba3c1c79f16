use std::collections::{BTreeSet, HashMap};

use crate::error::{Error, Result};
use crate::knowledge::Relation;

pub type TokenId = usize;

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const O1_OPEN: &str = "<o1>";
pub const O1_CLOSE: &str = "</o1>";
pub const O2_OPEN: &str = "<o2>";
pub const O2_CLOSE: &str = "</o2>";

/// Smallest vocabulary the model accepts.
pub const MIN_VOCAB: usize = 16;

pub fn relation_marker(rel: Relation) -> String {
    format!("<rel_{}>", rel.name())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Specials {
    pub pad: TokenId,
    pub unk: TokenId,
    pub bos: TokenId,
    pub eos: TokenId,
    pub o1_open: TokenId,
    pub o1_close: TokenId,
    pub o2_open: TokenId,
    pub o2_close: TokenId,
    pub relations: [TokenId; Relation::COUNT],
}

/// Closed word-level vocabulary: corpus words in sorted order, followed by
/// the special tokens. Word ids therefore start at 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    specials: Specials,
}

fn special_names() -> Vec<String> {
    let mut names: Vec<String> = [PAD, UNK, BOS, EOS, O1_OPEN, O1_CLOSE, O2_OPEN, O2_CLOSE]
        .iter()
        .map(|s| s.to_string())
        .collect();
    names.extend(Relation::ALL.iter().map(|r| relation_marker(*r)));
    names
}

fn is_special_name(s: &str) -> bool {
    s.starts_with('<') && s.ends_with('>') && s.len() > 2
}

impl Vocabulary {
    /// Builds the vocabulary from word tokens (already normalised). Words
    /// shaped like special tokens are dropped.
    pub fn build<I, S>(words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let set: BTreeSet<String> = words
            .into_iter()
            .map(|w| w.as_ref().to_string())
            .filter(|w| !w.is_empty() && !is_special_name(w))
            .collect();
        let mut tokens: Vec<String> = set.into_iter().collect();
        tokens.extend(special_names());
        Self::from_tokens(tokens)
    }

    /// Restores a vocabulary from its ordered token list.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary entry {t:?}")));
            }
        }
        if tokens.len() < MIN_VOCAB {
            return Err(Error::Config(format!(
                "vocabulary has {} tokens, at least {MIN_VOCAB} required",
                tokens.len()
            )));
        }
        let get = |name: &str| {
            index
                .get(name)
                .copied()
                .ok_or_else(|| Error::Config(format!("vocabulary lacks special token {name}")))
        };
        let mut relations = [0; Relation::COUNT];
        for (slot, rel) in relations.iter_mut().zip(Relation::ALL) {
            *slot = get(&relation_marker(rel))?;
        }
        let specials = Specials {
            pad: get(PAD)?,
            unk: get(UNK)?,
            bos: get(BOS)?,
            eos: get(EOS)?,
            o1_open: get(O1_OPEN)?,
            o1_close: get(O1_CLOSE)?,
            o2_open: get(O2_OPEN)?,
            o2_close: get(O2_CLOSE)?,
            relations,
        };
        Ok(Self {
            tokens,
            index,
            specials,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn specials(&self) -> &Specials {
        &self.specials
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    /// Id of `word`, or `<unk>` when out of vocabulary.
    pub fn id_or_unk(&self, word: &str) -> TokenId {
        self.id(word).unwrap_or(self.specials.unk)
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.tokens[id]
    }

    pub fn is_special(&self, id: TokenId) -> bool {
        is_special_name(&self.tokens[id])
    }

    /// Ids of ordinary word tokens, ascending.
    pub fn word_ids(&self) -> Vec<TokenId> {
        (0..self.len()).filter(|&i| !self.is_special(i)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn words_precede_specials_and_ids_are_dense() {
        let v = Vocabulary::build(["the", "cat", "sat", "the"]).unwrap();
        assert_eq!(v.len(), 3 + 8 + Relation::COUNT);
        assert_eq!(v.token(0), "cat");
        assert_eq!(v.token(2), "the");
        assert_eq!(v.word_ids(), vec![0, 1, 2]);
        for (i, t) in v.tokens().iter().enumerate() {
            assert_eq!(v.id(t), Some(i));
        }
        assert_eq!(v.token(v.specials().eos), EOS);
        assert_eq!(v.id_or_unk("zyzzyva"), v.specials().unk);
    }

    #[test]
    fn rejects_duplicates_and_missing_specials() {
        let mut toks: Vec<String> = special_names();
        toks.push("a".into());
        toks.push("a".into());
        assert!(Vocabulary::from_tokens(toks).is_err());
        let toks: Vec<String> = (0..20).map(|i| format!("w{i}")).collect();
        assert!(Vocabulary::from_tokens(toks).is_err());
    }
}
