//! Decoder-versus-brute-force audit on tiny problems.
//!
//! Each audited instance restricts hypotheses to exactly `len` tokens from a
//! small word subset: the gold hypothesis's words (when present) topped up
//! with random words. The greedy continuation from the past observation is
//! the baseline; the oracle enumerates every hypothesis of length 1..=len.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::{tokenize, AbductiveInstance};
use crate::decoding::{cold, delorean, forward_greedy, DecodeConfig, Observations, Strategy};
use crate::error::{Error, Result};
use crate::lm::{LmParams, TokenId, Vocabulary};
use crate::oracle::{brute_force_best, objective};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditConfig {
    pub instances: usize,
    pub subset_size: usize,
    pub len: usize,
    pub seed: u64,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            instances: 50,
            subset_size: 12,
            len: 3,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditRow {
    pub id: String,
    pub subset: Vec<TokenId>,
    pub baseline: f64,
    pub delorean: f64,
    pub cold: f64,
    pub oracle: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Audit {
    pub rows: Vec<AuditRow>,
}

impl Audit {
    fn rate(&self, f: impl Fn(&AuditRow) -> bool) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.rows.iter().filter(|r| f(r)).count() as f64 / self.rows.len() as f64
    }

    /// Fraction of instances where DELOREAN matches or beats the baseline.
    pub fn delorean_rate(&self) -> f64 {
        self.rate(|r| r.delorean >= r.baseline)
    }

    pub fn cold_rate(&self) -> f64 {
        self.rate(|r| r.cold >= r.baseline)
    }

    /// Instances where a decoder scored above the exhaustive optimum.
    pub fn bound_violations(&self) -> usize {
        self.rows
            .iter()
            .filter(|r| r.delorean > r.oracle || r.cold > r.oracle || r.baseline > r.oracle)
            .count()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn summary(&self) -> String {
        format!(
            "{} instances: delorean >= greedy on {:.1}%, cold >= greedy on {:.1}%, oracle bound violations {}",
            self.rows.len(),
            100.0 * self.delorean_rate(),
            100.0 * self.cold_rate(),
            self.bound_violations()
        )
    }
}

fn subset_for(vocab: &Vocabulary, inst: &AbductiveInstance, size: usize, rng: &mut ChaCha8Rng) -> Vec<TokenId> {
    let words = vocab.word_ids();
    let mut subset: Vec<TokenId> = inst
        .gold()
        .map(|g| tokenize(vocab, g))
        .unwrap_or_default()
        .into_iter()
        .filter(|id| words.binary_search(id).is_ok())
        .collect();
    subset.sort_unstable();
    subset.dedup();
    subset.truncate(size);
    let mut rest: Vec<TokenId> = words.iter().copied().filter(|w| !subset.contains(w)).collect();
    rest.shuffle(rng);
    let fill = size - subset.len();
    subset.extend(rest.into_iter().take(fill));
    subset.sort_unstable();
    subset
}

/// Runs both unsupervised decoders and the oracle on `cfg.instances`
/// instances (cycling through `instances`). Decoder settings come from
/// `decode`, with the hypothesis length forced to `cfg.len` and a distinct
/// seed per audited instance.
pub fn oracle_audit(
    params: &LmParams,
    vocab: &Vocabulary,
    instances: &[AbductiveInstance],
    decode: &DecodeConfig,
    cfg: &AuditConfig,
) -> Result<Audit> {
    if instances.is_empty() {
        return Err(Error::Input("audit needs at least one instance".into()));
    }
    if cfg.subset_size == 0 || cfg.subset_size > vocab.word_ids().len() {
        return Err(Error::Config(format!(
            "subset size must lie in 1..={}, got {}",
            vocab.word_ids().len(),
            cfg.subset_size
        )));
    }
    let mut rows = Vec::with_capacity(cfg.instances);
    for i in 0..cfg.instances {
        let inst = &instances[i % instances.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(i as u64));
        let subset = subset_for(vocab, inst, cfg.subset_size, &mut rng);
        let obs = Observations::new(vocab, &inst.obs1, &inst.obs2)?;
        let base = forward_greedy(params, &obs.past, &subset, cfg.len)?;
        let dc = DecodeConfig {
            max_len: cfg.len,
            seed: decode.seed.wrapping_add(i as u64),
            ..decode.clone()
        };
        let d = delorean(
            params,
            &obs,
            &subset,
            &DecodeConfig {
                strategy: Strategy::Delorean,
                ..dc.clone()
            },
        )?;
        let c = cold(
            params,
            &obs,
            &subset,
            &DecodeConfig {
                strategy: Strategy::Cold,
                ..dc
            },
        )?;
        let o = brute_force_best(params, &obs, cfg.len, &subset)?;
        rows.push(AuditRow {
            id: inst.id.clone(),
            subset,
            baseline: objective(params, &base, &obs)?,
            delorean: d.objective,
            cold: c.objective,
            oracle: o.objective,
        });
    }
    Ok(Audit { rows })
}
