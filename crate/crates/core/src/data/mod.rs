//! Instances, tokenisation, input layout, JSONL I/O and the synthetic corpus.

mod encode;
mod instance;
mod jsonl;
pub mod synth;

pub use encode::{encode_instance, observation_context, EncodedInstance, Variant};
pub use instance::AbductiveInstance;
pub use jsonl::{load_jsonl, parse_jsonl, save_jsonl, to_jsonl};
pub use synth::{synth_corpus, SynthCorpus, WorldConfig};

use crate::error::Result;
use crate::knowledge::RuleTable;
use crate::lm::{TokenId, Vocabulary};
use crate::text;

/// Lowercased word-level tokenisation; unknown words map to `<unk>`.
pub fn tokenize(vocab: &Vocabulary, text: &str) -> Vec<TokenId> {
    text::words(text).iter().map(|w| vocab.id_or_unk(w)).collect()
}

/// Surface text of a token sequence.
pub fn detokenize(vocab: &Vocabulary, ids: &[TokenId]) -> String {
    let words: Vec<&str> = ids.iter().map(|&id| vocab.token(id)).collect();
    text::join_words(&words)
}

/// Closed vocabulary over the instances' texts plus every word the rule
/// table can emit.
pub fn build_vocabulary<'a>(
    instances: impl IntoIterator<Item = &'a AbductiveInstance>,
    rules: &RuleTable,
) -> Result<Vocabulary> {
    let mut words = rules.template_words();
    for inst in instances {
        words.extend(text::words(&inst.obs1));
        words.extend(text::words(&inst.obs2));
        for h in &inst.gold_hyps {
            words.extend(text::words(h));
        }
    }
    Vocabulary::build(words)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::knowledge::KnowledgeBundle;
    use crate::lm::{LmParams, ModelConfig};

    fn vocab() -> Vocabulary {
        let inst = AbductiveInstance::new("x", "I was hungry.", "I felt full.", ["the cat sat".to_string()]).unwrap();
        build_vocabulary([&inst], &RuleTable::default()).unwrap()
    }

    #[test]
    fn tokenize_round_trip_and_unknowns() {
        let v = vocab();
        let ids = tokenize(&v, "the cat sat");
        assert_eq!(
            ids,
            vec![v.id("the").unwrap(), v.id("cat").unwrap(), v.id("sat").unwrap()]
        );
        assert_eq!(detokenize(&v, &ids), "the cat sat");
        assert!(tokenize(&v, "").is_empty());
        assert_eq!(tokenize(&v, "zyzzyva"), vec![v.specials().unk]);
        assert_eq!(detokenize(&v, &tokenize(&v, "  I  was HUNGRY. ")), "i was hungry.");
    }

    #[test]
    fn base_layout_is_tagged() {
        let v = vocab();
        let inst = AbductiveInstance::new("x", "I was hungry.", "I felt full.", ["the cat sat".to_string()]).unwrap();
        let enc = encode_instance(&v, &inst, Variant::Base, None, 128).unwrap();
        let s = v.specials();
        assert_eq!(&enc.context[..3], &[s.bos, s.o1_open, v.id("i").unwrap()]);
        assert_eq!(
            detokenize(&v, &enc.full()),
            "<bos> <o1> i was hungry. </o1> <o2> i felt full. </o2> the cat sat <eos>"
        );
        assert_eq!((enc.m, enc.n, enc.big_n), (4, 4, 4));
        assert!(enc.target[..enc.big_n - 1].iter().all(|&t| !v.is_special(t)));
    }

    #[test]
    fn knowledge_text_extends_context_only() {
        let v = vocab();
        let inst = AbductiveInstance::new("x", "I was hungry.", "I felt full.", ["the cat sat".to_string()]).unwrap();
        let cfg = ModelConfig {
            vocab_size: v.len(),
            d_model: 8,
            n_layers: 1,
            n_heads: 1,
            d_ff: 8,
            max_len: 256,
        };
        let params = LmParams::init(cfg, 1).unwrap();
        let k = KnowledgeBundle::build(&RuleTable::default(), &inst.obs1, &inst.obs2, &params, &v);
        let base = encode_instance(&v, &inst, Variant::Base, None, 256).unwrap();
        let kt = encode_instance(&v, &inst, Variant::KnowledgeText, Some(&k), 256).unwrap();
        assert!(kt.context.len() > base.context.len());
        assert_eq!(kt.target, base.target);
        let (a, b) = kt.knowledge_span.unwrap();
        assert_eq!(kt.context[a], v.specials().relations[0]);
        assert_eq!(b, kt.context.len());
        assert!(matches!(
            encode_instance(&v, &inst, Variant::KnowledgeText, None, 256),
            Err(Error::Config(_))
        ));
        // truncation keeps the encoding within bounds
        let tight = encode_instance(&v, &inst, Variant::KnowledgeText, Some(&k), base.total_len() + 3).unwrap();
        assert_eq!(tight.total_len(), base.total_len() + 3);
    }

    #[test]
    fn length_boundary() {
        let v = vocab();
        let inst = AbductiveInstance::new("x", "I was hungry.", "I felt full.", ["the cat sat".to_string()]).unwrap();
        let len = encode_instance(&v, &inst, Variant::Base, None, 128)
            .unwrap()
            .total_len();
        assert!(encode_instance(&v, &inst, Variant::Base, None, len).is_ok());
        assert!(matches!(
            encode_instance(&v, &inst, Variant::Base, None, len - 1),
            Err(Error::Length { .. })
        ));
    }
}
