//! Hypothesis generation.
//!
//! Supervised strategies (greedy, beam, top-p) continue the encoded context
//! of a fine-tuned model. The unsupervised strategies work on a plain
//! language model that conditions only on the past observation: DELOREAN
//! alternates a backward gradient step on the hypothesis logits with a
//! forward re-pass; COLD runs Langevin dynamics on per-position simplices
//! under a fluency + future-coherence energy.
//!
//! For the unsupervised strategies, hypotheses have exactly `max_len`
//! tokens drawn from an allowed subset (ordinary words by default). The
//! ranking objective is `log P(h | o1) + log P(o2 | o1, h)`; see
//! [`crate::oracle::objective`].

mod cold;
mod delorean;
mod energy;
mod simplex;
mod standard;

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

pub use cold::{cold, decode_cold};
pub use delorean::{decode_delorean, delorean};
pub use energy::{energy, energy_on_subset, EnergyBreakdown, EnergyWeights};
pub use simplex::{discretize, discretize_on_subset, project_simplex};
pub use standard::{beam_search, decode_standard, forward_greedy, generate, greedy, top_p_sample};

use crate::data::{tokenize, AbductiveInstance, Variant};
use crate::error::{Error, Result};
use crate::knowledge::KnowledgeBundle;
use crate::lm::{LmParams, TokenId, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    Greedy,
    Beam,
    TopP,
    Delorean,
    Cold,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Greedy,
        Strategy::Beam,
        Strategy::TopP,
        Strategy::Delorean,
        Strategy::Cold,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Greedy => "greedy",
            Strategy::Beam => "beam",
            Strategy::TopP => "top_p",
            Strategy::Delorean => "delorean",
            Strategy::Cold => "cold",
        }
    }

    /// Whether the strategy needs a model fine-tuned on hypotheses.
    pub fn is_supervised(self) -> bool {
        matches!(self, Strategy::Greedy | Strategy::Beam | Strategy::TopP)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown strategy {s:?}")))
    }
}

/// Starting point of the COLD simplices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColdInit {
    Uniform,
    /// Softmax of the forward (greedy) pass logits from the past observation.
    Forward,
}

impl FromStr for ColdInit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(ColdInit::Uniform),
            "forward" => Ok(ColdInit::Forward),
            other => Err(Error::Config(format!("unknown cold init {other:?}"))),
        }
    }
}

impl fmt::Display for ColdInit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ColdInit::Uniform => "uniform",
            ColdInit::Forward => "forward",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeConfig {
    pub strategy: Strategy,
    pub temperature: f64,
    pub top_p: f64,
    pub beam_width: usize,
    /// Maximum hypothesis length T (exact length for the unsupervised strategies).
    pub max_len: usize,
    pub delorean_iters: usize,
    /// Backward step size λ.
    pub delorean_step: f64,
    /// Mixing weight γ on the forward logits.
    pub delorean_mix: f64,
    pub cold_iters: usize,
    /// Langevin step size η.
    pub cold_step: f64,
    pub cold_sigma0: f64,
    pub cold_sigma_min: f64,
    pub cold_init: ColdInit,
    /// Also rank discretised candidates every this many steps (0: final only).
    pub cold_rank_every: usize,
    pub weight_fluency: f64,
    pub weight_future: f64,
    /// Top-k used by the LM-guided discretisation.
    pub top_k: usize,
    pub seed: u64,
}

impl Default for DecodeConfig {
    /// The `decode.*` settings of the shipped defaults file.
    fn default() -> Self {
        crate::harness::ConfigMap::defaults()
            .decode_config()
            .expect("shipped defaults are valid")
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.max_len == 0 {
            return bad("max hypothesis length must be at least 1".into());
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad(format!("temperature must be positive, got {}", self.temperature));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return bad(format!("top_p must lie in (0, 1], got {}", self.top_p));
        }
        if self.beam_width == 0 {
            return bad("beam width must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.delorean_mix) {
            return bad(format!("mixing weight must lie in [0, 1], got {}", self.delorean_mix));
        }
        // zero step sizes are accepted as degenerate configurations
        for (name, v) in [
            ("delorean step", self.delorean_step),
            ("cold step", self.cold_step),
            ("sigma0", self.cold_sigma0),
            ("sigma_min", self.cold_sigma_min),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if self.cold_sigma_min > self.cold_sigma0 {
            return bad("sigma_min must not exceed sigma0".into());
        }
        if self.cold_sigma0 > 0.0 && self.cold_sigma_min == 0.0 {
            return bad("a geometric noise schedule needs sigma_min > 0 when sigma0 > 0".into());
        }
        self.weights()?;
        if self.top_k == 0 {
            return bad("top_k must be at least 1".into());
        }
        Ok(())
    }

    pub fn weights(&self) -> Result<EnergyWeights> {
        EnergyWeights::new(self.weight_fluency, self.weight_future)
    }

    /// Noise scale at Langevin step `k` of `cold_iters`.
    pub fn sigma_at(&self, k: usize) -> f64 {
        if self.cold_sigma0 == 0.0 {
            return 0.0;
        }
        if self.cold_iters <= 1 {
            return self.cold_sigma0;
        }
        let frac = k as f64 / (self.cold_iters - 1) as f64;
        self.cold_sigma0 * (self.cold_sigma_min / self.cold_sigma0).powf(frac)
    }
}

/// Token-level view of the two observations for the unsupervised decoders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Observations {
    /// `<bos>` followed by the past observation.
    pub past: Vec<TokenId>,
    /// The future observation, without markers.
    pub future: Vec<TokenId>,
}

impl Observations {
    pub fn new(vocab: &Vocabulary, obs1: &str, obs2: &str) -> Result<Self> {
        let mut past = vec![vocab.specials().bos];
        past.extend(tokenize(vocab, obs1));
        let future = tokenize(vocab, obs2);
        if future.is_empty() {
            return Err(Error::Input("future observation has no tokens".into()));
        }
        Ok(Self { past, future })
    }
}

/// One iteration of an iterative decoder.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub energy_total: f64,
    pub energy_fluency: f64,
    pub energy_future: f64,
    pub candidate_text: String,
    /// Ranking objective of the candidate.
    pub objective: f64,
}

pub fn trace_to_jsonl(trace: &[TraceRecord]) -> Result<String> {
    let mut out = String::new();
    for r in trace {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

/// Token-level result of an unsupervised search.
#[derive(Debug, Clone, PartialEq)]
pub struct Search {
    pub tokens: Vec<TokenId>,
    pub objective: f64,
    pub energy: EnergyBreakdown,
    /// Trace records with `candidate_text` holding space-joined token ids;
    /// the text-level wrappers rewrite them.
    pub trace: Vec<TraceRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOutput {
    pub tokens: Vec<TokenId>,
    pub text: String,
    /// Length-normalised log-probability for the supervised strategies,
    /// ranking objective for the unsupervised ones.
    pub score: f64,
    pub energy: Option<EnergyBreakdown>,
    pub trace: Vec<TraceRecord>,
}

/// Per-instance seed so that results do not depend on decoding order.
pub fn instance_seed(seed: u64, id: &str) -> u64 {
    // FNV-1a
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in id.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    seed ^ h
}

/// Decodes one instance with whatever `cfg.strategy` selects. `variant` and
/// `knowledge` only matter for the supervised strategies.
pub fn decode(
    params: &LmParams,
    vocab: &Vocabulary,
    instance: &AbductiveInstance,
    cfg: &DecodeConfig,
    variant: Variant,
    knowledge: Option<&KnowledgeBundle>,
) -> Result<DecodeOutput> {
    match cfg.strategy {
        Strategy::Greedy | Strategy::Beam | Strategy::TopP => {
            decode_standard(params, vocab, instance, cfg, variant, knowledge)
        }
        Strategy::Delorean => decode_delorean(params, vocab, &instance.obs1, &instance.obs2, cfg),
        Strategy::Cold => {
            let cfg = DecodeConfig {
                seed: instance_seed(cfg.seed, &instance.id),
                ..cfg.clone()
            };
            decode_cold(params, vocab, &instance.obs1, &instance.obs2, &cfg)
        }
    }
}

fn ids_text(ids: &[TokenId]) -> String {
    ids.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(" ")
}

fn into_output(search: Search, vocab: &Vocabulary) -> DecodeOutput {
    let text = crate::data::detokenize(vocab, &search.tokens);
    let trace = search
        .trace
        .into_iter()
        .map(|mut r| {
            let ids: Vec<TokenId> = r.candidate_text.split(' ').filter_map(|s| s.parse().ok()).collect();
            r.candidate_text = crate::data::detokenize(vocab, &ids);
            r
        })
        .collect();
    DecodeOutput {
        tokens: search.tokens,
        text,
        score: search.objective,
        energy: Some(search.energy),
        trace,
    }
}

fn check_allowed(params: &LmParams, allowed: &[TokenId]) -> Result<()> {
    if allowed.is_empty() {
        return Err(Error::Input("allowed token set is empty".into()));
    }
    if allowed.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Input("allowed token ids must be strictly ascending".into()));
    }
    params.check_ids(allowed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
        }
        assert!("sample".parse::<Strategy>().is_err());
    }

    #[test]
    fn default_config_is_valid_and_checks_ranges() {
        let cfg = DecodeConfig::default();
        cfg.validate().unwrap();
        let mut c = cfg.clone();
        c.delorean_mix = 1.5;
        assert!(c.validate().is_err());
        let mut c = cfg.clone();
        c.weight_fluency = 0.0;
        c.weight_future = 0.0;
        assert!(c.validate().is_err());
        let mut c = cfg;
        c.max_len = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn sigma_schedule_is_geometric() {
        let cfg = DecodeConfig {
            cold_iters: 3,
            cold_sigma0: 1.0,
            cold_sigma_min: 0.01,
            ..DecodeConfig::default()
        };
        assert_eq!(cfg.sigma_at(0), 1.0);
        assert!((cfg.sigma_at(1) - 0.1).abs() < 1e-12);
        assert!((cfg.sigma_at(2) - 0.01).abs() < 1e-12);
        let zero = DecodeConfig {
            cold_sigma0: 0.0,
            cold_sigma_min: 0.0,
            ..cfg
        };
        assert_eq!(zero.sigma_at(1), 0.0);
    }

    #[test]
    fn instance_seeds_differ_by_id() {
        assert_ne!(instance_seed(1, "a"), instance_seed(1, "b"));
        assert_eq!(instance_seed(1, "a"), instance_seed(1, "a"));
    }
}
