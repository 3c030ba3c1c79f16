use std::fmt;
use std::str::FromStr;

use super::{tokenize, AbductiveInstance};
use crate::error::{Error, Result};
use crate::knowledge::{KnowledgeBundle, BUNDLE_SIZE};
use crate::lm::{TokenId, Vocabulary};

/// Supervised conditioning variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Observations only.
    Base,
    /// Observations plus the 18 inferences rendered as text.
    KnowledgeText,
    /// Observations plus the 18 inference vectors prepended as extra embeddings.
    KnowledgeEmb,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Base => "base",
            Variant::KnowledgeText => "knowledge_text",
            Variant::KnowledgeEmb => "knowledge_emb",
        }
    }

    pub fn needs_knowledge(self) -> bool {
        !matches!(self, Variant::Base)
    }

    /// Positional slots consumed ahead of the token sequence.
    pub fn extra_slots(self) -> usize {
        match self {
            Variant::KnowledgeEmb => BUNDLE_SIZE,
            _ => 0,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base" => Ok(Variant::Base),
            "knowledge_text" => Ok(Variant::KnowledgeText),
            "knowledge_emb" => Ok(Variant::KnowledgeEmb),
            other => Err(Error::Config(format!("unknown variant {other:?}"))),
        }
    }
}

/// Token layout of one instance:
/// `<bos> <o1> obs1 </o1> <o2> obs2 </o2> [<rel_k> inference]* | hypothesis <eos>`
/// where `|` separates `context` from `target`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedInstance {
    pub context: Vec<TokenId>,
    /// Hypothesis tokens followed by `<eos>`; empty when no gold hypothesis.
    pub target: Vec<TokenId>,
    /// Range of the knowledge text inside `context`, if any.
    pub knowledge_span: Option<(usize, usize)>,
    /// Past-observation length in tokens.
    pub m: usize,
    /// Future-observation length in tokens.
    pub n: usize,
    /// Target length including `<eos>`.
    pub big_n: usize,
    pub variant: Variant,
}

impl EncodedInstance {
    pub fn total_len(&self) -> usize {
        self.context.len() + self.target.len() + self.variant.extra_slots()
    }

    /// Context followed by target.
    pub fn full(&self) -> Vec<TokenId> {
        let mut v = self.context.clone();
        v.extend_from_slice(&self.target);
        v
    }
}

/// Context tokens (with `<bos>`) for the observation layout, without knowledge.
pub fn observation_context(vocab: &Vocabulary, obs1: &str, obs2: &str) -> (Vec<TokenId>, usize, usize) {
    let s = vocab.specials();
    let o1 = tokenize(vocab, obs1);
    let o2 = tokenize(vocab, obs2);
    let mut ctx = Vec::with_capacity(o1.len() + o2.len() + 5);
    ctx.extend([s.bos, s.o1_open]);
    ctx.extend_from_slice(&o1);
    ctx.extend([s.o1_close, s.o2_open]);
    ctx.extend_from_slice(&o2);
    ctx.push(s.o2_close);
    (ctx, o1.len(), o2.len())
}

fn knowledge_tokens(vocab: &Vocabulary, bundle: &KnowledgeBundle) -> Vec<TokenId> {
    let s = vocab.specials();
    let mut out = Vec::new();
    for e in bundle.entries() {
        out.push(s.relations[e.relation.index()]);
        out.extend(tokenize(vocab, &e.text));
    }
    out
}

/// Encodes `inst` under `variant`. The gold hypothesis (first reference) is
/// used as the target when present. Knowledge text is truncated from the end
/// if the encoding would exceed `max_len`; anything still too long fails.
pub fn encode_instance(
    vocab: &Vocabulary,
    inst: &AbductiveInstance,
    variant: Variant,
    knowledge: Option<&KnowledgeBundle>,
    max_len: usize,
) -> Result<EncodedInstance> {
    if variant.needs_knowledge() && knowledge.is_none() {
        return Err(Error::Config(format!("variant {variant} requires a knowledge bundle")));
    }
    let (mut context, m, n) = observation_context(vocab, &inst.obs1, &inst.obs2);
    let mut target: Vec<TokenId> = match inst.gold() {
        Some(h) => tokenize(vocab, h)
            .into_iter()
            .map(|id| if vocab.is_special(id) { vocab.specials().unk } else { id })
            .collect(),
        None => Vec::new(),
    };
    if inst.gold().is_some() {
        target.push(vocab.specials().eos);
    }
    let fixed = context.len() + target.len() + variant.extra_slots();
    let mut knowledge_span = None;
    if let (Variant::KnowledgeText, Some(bundle)) = (variant, knowledge) {
        let mut k = knowledge_tokens(vocab, bundle);
        if fixed + k.len() > max_len {
            k.truncate(max_len.saturating_sub(fixed));
        }
        let start = context.len();
        context.extend_from_slice(&k);
        knowledge_span = Some((start, context.len()));
    }
    let enc = EncodedInstance {
        big_n: target.len(),
        context,
        target,
        knowledge_span,
        m,
        n,
        variant,
    };
    if enc.total_len() > max_len {
        return Err(Error::Length {
            len: enc.total_len(),
            max: max_len,
        });
    }
    Ok(enc)
}
