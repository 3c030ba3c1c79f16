use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{instance_seed, DecodeConfig, DecodeOutput, Strategy};
use crate::data::{detokenize, encode_instance, AbductiveInstance, Variant};
use crate::error::{Error, Result};
use crate::knowledge::KnowledgeBundle;
use crate::lm::{argmax, log_softmax, LmParams, TokenId, Vocabulary};

/// What the supervised strategies continue from.
#[derive(Debug, Clone, Copy)]
pub struct Prompt<'a> {
    pub tokens: &'a [TokenId],
    pub extras: Option<&'a [Array1<f64>]>,
    /// Ascending token ids the decoder may emit, including `eos`.
    pub allowed: &'a [TokenId],
    pub eos: TokenId,
}

/// A finished hypothesis (without `<eos>`).
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub tokens: Vec<TokenId>,
    /// Log-probability of the emitted tokens, `<eos>` included when emitted.
    pub log_prob: f64,
    pub scored: usize,
}

impl Generated {
    pub fn normalized(&self) -> f64 {
        if self.scored == 0 {
            0.0
        } else {
            self.log_prob / self.scored as f64
        }
    }
}

impl Prompt<'_> {
    fn budget(&self, params: &LmParams, max_len: usize) -> Result<usize> {
        let used = self.tokens.len() + self.extras.map_or(0, <[_]>::len);
        let room = params.config.max_len.saturating_sub(used);
        if room == 0 {
            return Err(Error::Length {
                len: used + 1,
                max: params.config.max_len,
            });
        }
        Ok(max_len.min(room))
    }

    /// Log-probabilities over `allowed` (renormalised, temperature applied).
    fn step(&self, params: &LmParams, generated: &[TokenId], temperature: f64) -> Result<Vec<f64>> {
        let mut seq = self.tokens.to_vec();
        seq.extend_from_slice(generated);
        let logits = params.next_logits(&seq, self.extras)?;
        let sub: Array1<f64> = self.allowed.iter().map(|&id| logits[id] / temperature).collect();
        Ok(log_softmax(&sub).to_vec())
    }
}

/// Exactly `len` tokens from `allowed`, each the argmax after the previous ones.
pub fn forward_greedy(params: &LmParams, prefix: &[TokenId], allowed: &[TokenId], len: usize) -> Result<Vec<TokenId>> {
    let mut seq = prefix.to_vec();
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        let logits = params.next_logits(&seq, None)?;
        let id = allowed[argmax(allowed.iter().map(|&a| logits[a]))];
        out.push(id);
        seq.push(id);
    }
    Ok(out)
}

pub fn greedy(params: &LmParams, prompt: Prompt, max_len: usize, temperature: f64) -> Result<Generated> {
    let limit = prompt.budget(params, max_len)?;
    let mut out = Generated {
        tokens: Vec::new(),
        log_prob: 0.0,
        scored: 0,
    };
    while out.tokens.len() < limit {
        let lp = prompt.step(params, &out.tokens, temperature)?;
        let j = argmax(lp.iter().copied());
        out.log_prob += lp[j];
        out.scored += 1;
        if prompt.allowed[j] == prompt.eos {
            break;
        }
        out.tokens.push(prompt.allowed[j]);
    }
    Ok(out)
}

/// Beam search ranked by cumulative log-probability while expanding; the
/// returned hypothesis is the finished candidate with the best
/// length-normalised log-probability. Ties go to the lexicographically
/// smallest token sequence.
pub fn beam_search(
    params: &LmParams,
    prompt: Prompt,
    max_len: usize,
    width: usize,
    temperature: f64,
) -> Result<Generated> {
    let limit = prompt.budget(params, max_len)?;
    let mut live = vec![Generated {
        tokens: Vec::new(),
        log_prob: 0.0,
        scored: 0,
    }];
    let mut finished: Vec<Generated> = Vec::new();
    while !live.is_empty() {
        let mut expansions: Vec<(Generated, bool)> = Vec::new();
        for beam in &live {
            let lp = prompt.step(params, &beam.tokens, temperature)?;
            for (j, &id) in prompt.allowed.iter().enumerate() {
                let mut next = beam.clone();
                next.log_prob += lp[j];
                next.scored += 1;
                let done = id == prompt.eos;
                if !done {
                    next.tokens.push(id);
                }
                expansions.push((next, done));
            }
        }
        // ties compare the emitted sequences, `<eos>` included, by token id
        let key = |g: &Generated, done: bool| {
            let mut k = g.tokens.clone();
            if done {
                k.push(prompt.eos);
            }
            k
        };
        expansions.sort_by(|(a, da), (b, db)| {
            b.log_prob
                .total_cmp(&a.log_prob)
                .then_with(|| key(a, *da).cmp(&key(b, *db)))
        });
        expansions.truncate(width);
        live.clear();
        for (g, done) in expansions {
            if done || g.tokens.len() >= limit {
                finished.push(g);
            } else {
                live.push(g);
            }
        }
    }
    let mut best = finished.swap_remove(0);
    for g in finished {
        let (s, b) = (g.normalized(), best.normalized());
        if s > b || (s == b && g.tokens < best.tokens) {
            best = g;
        }
    }
    Ok(best)
}

/// Nucleus sampling: the smallest set of highest-probability tokens whose
/// mass reaches `top_p`, renormalised.
pub fn top_p_sample(
    params: &LmParams,
    prompt: Prompt,
    max_len: usize,
    temperature: f64,
    top_p: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Generated> {
    let limit = prompt.budget(params, max_len)?;
    let mut out = Generated {
        tokens: Vec::new(),
        log_prob: 0.0,
        scored: 0,
    };
    while out.tokens.len() < limit {
        let lp = prompt.step(params, &out.tokens, temperature)?;
        let mut order: Vec<usize> = (0..lp.len()).collect();
        order.sort_by(|&a, &b| lp[b].total_cmp(&lp[a]).then(a.cmp(&b)));
        let mut mass = 0.0;
        let mut nucleus = Vec::new();
        for &j in &order {
            nucleus.push(j);
            mass += lp[j].exp();
            if mass >= top_p {
                break;
            }
        }
        let u: f64 = rng.random::<f64>() * mass;
        let mut acc = 0.0;
        let mut pick = *nucleus.last().expect("nonempty nucleus");
        for &j in &nucleus {
            acc += lp[j].exp();
            if u < acc {
                pick = j;
                break;
            }
        }
        out.log_prob += lp[pick];
        out.scored += 1;
        if prompt.allowed[pick] == prompt.eos {
            break;
        }
        out.tokens.push(prompt.allowed[pick]);
    }
    Ok(out)
}

/// Runs the supervised strategy selected by `cfg`; `seed` feeds top-p.
pub fn generate(params: &LmParams, prompt: Prompt, cfg: &DecodeConfig, seed: u64) -> Result<Generated> {
    match cfg.strategy {
        Strategy::Greedy => greedy(params, prompt, cfg.max_len, cfg.temperature),
        Strategy::Beam => beam_search(params, prompt, cfg.max_len, cfg.beam_width, cfg.temperature),
        Strategy::TopP => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            top_p_sample(params, prompt, cfg.max_len, cfg.temperature, cfg.top_p, &mut rng)
        }
        other => Err(Error::Config(format!("{other} is not a supervised strategy"))),
    }
}

/// Continues the encoded observations (and knowledge) of `instance`. Special
/// tokens other than `<eos>` are never emitted. The score is the
/// length-normalised log-probability.
pub fn decode_standard(
    params: &LmParams,
    vocab: &Vocabulary,
    instance: &AbductiveInstance,
    cfg: &DecodeConfig,
    variant: Variant,
    knowledge: Option<&KnowledgeBundle>,
) -> Result<DecodeOutput> {
    cfg.validate()?;
    if !cfg.strategy.is_supervised() {
        return Err(Error::Config(format!("{} is not a supervised strategy", cfg.strategy)));
    }
    let mut bare = instance.clone();
    bare.gold_hyps.clear();
    let enc = encode_instance(vocab, &bare, variant, knowledge, params.config.max_len)?;
    let extras = match variant {
        Variant::KnowledgeEmb => Some(knowledge.expect("checked by encode_instance").vectors()),
        _ => None,
    };
    let eos = vocab.specials().eos;
    let mut allowed = vocab.word_ids();
    allowed.push(eos);
    allowed.sort_unstable();
    let prompt = Prompt {
        tokens: &enc.context,
        extras: extras.as_deref(),
        allowed: &allowed,
        eos,
    };
    let g = generate(params, prompt, cfg, instance_seed(cfg.seed, &instance.id))?;
    Ok(DecodeOutput {
        text: detokenize(vocab, &g.tokens),
        score: g.normalized(),
        tokens: g.tokens,
        energy: None,
        trace: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::build_vocabulary;
    use crate::knowledge::RuleTable;
    use crate::lm::ModelConfig;

    fn setup(scale: f64) -> (LmParams, Vocabulary, AbductiveInstance) {
        let inst =
            AbductiveInstance::new("i1", "sam wanted candy", "sam was happy", ["sam got candy".to_string()]).unwrap();
        let vocab = build_vocabulary([&inst], &RuleTable::default()).unwrap();
        let cfg = ModelConfig {
            vocab_size: vocab.len(),
            d_model: 16,
            n_layers: 1,
            n_heads: 2,
            d_ff: 32,
            max_len: 200,
        };
        let mut p = LmParams::init(cfg, 7).unwrap();
        p.head_scale[[0, 0]] = scale;
        (p, vocab, inst)
    }

    fn cfg(strategy: Strategy) -> DecodeConfig {
        DecodeConfig {
            strategy,
            max_len: 6,
            ..DecodeConfig::default()
        }
    }

    #[test]
    fn uniform_greedy_repeats_lowest_word_id() {
        let (p, v, inst) = setup(0.0);
        let out = decode_standard(&p, &v, &inst, &cfg(Strategy::Greedy), Variant::Base, None).unwrap();
        assert_eq!(out.tokens, vec![0; 6]);
    }

    #[test]
    fn beam_one_is_greedy() {
        for scale in [0.0, 3.0, 10.0, 30.0] {
            let (p, v, inst) = setup(scale);
            let g = decode_standard(&p, &v, &inst, &cfg(Strategy::Greedy), Variant::Base, None).unwrap();
            let mut c = cfg(Strategy::Beam);
            c.beam_width = 1;
            let b = decode_standard(&p, &v, &inst, &c, Variant::Base, None).unwrap();
            assert_eq!(g.tokens, b.tokens);
            assert!((g.score - b.score).abs() < 1e-12);
        }
    }

    #[test]
    fn wider_beam_is_at_least_as_good_as_greedy_sequence_score() {
        let (p, v, inst) = setup(10.0);
        let g = decode_standard(&p, &v, &inst, &cfg(Strategy::Greedy), Variant::Base, None).unwrap();
        let b = decode_standard(&p, &v, &inst, &cfg(Strategy::Beam), Variant::Base, None).unwrap();
        assert!(b.score >= g.score - 1e-12 || b.tokens.len() != g.tokens.len());
    }

    #[test]
    fn top_p_is_seeded() {
        let (p, v, inst) = setup(5.0);
        let c = cfg(Strategy::TopP);
        let a = decode_standard(&p, &v, &inst, &c, Variant::Base, None).unwrap();
        let b = decode_standard(&p, &v, &inst, &c, Variant::Base, None).unwrap();
        assert_eq!(a, b);
        let differs = (2..12).any(|s| {
            let c = DecodeConfig { seed: s, ..c.clone() };
            decode_standard(&p, &v, &inst, &c, Variant::Base, None).unwrap().tokens != a.tokens
        });
        assert!(differs);
    }

    #[test]
    fn specials_other_than_eos_are_never_emitted() {
        let (p, v, inst) = setup(30.0);
        for st in [Strategy::Greedy, Strategy::Beam, Strategy::TopP] {
            let out = decode_standard(&p, &v, &inst, &cfg(st), Variant::Base, None).unwrap();
            assert!(out.tokens.iter().all(|&t| !v.is_special(t)));
            assert!(out.tokens.len() <= 6);
        }
    }

    #[test]
    fn forward_greedy_has_requested_length() {
        let (p, v, _) = setup(10.0);
        let words = v.word_ids();
        let prefix = [v.specials().bos, 0, 1];
        let out = forward_greedy(&p, &prefix, &words, 4).unwrap();
        assert_eq!(out.len(), 4);
        assert!(out.iter().all(|t| words.contains(t)));
    }
}
