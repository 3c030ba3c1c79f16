//! Langevin dynamics on per-position simplices.
//!
//! ỹ ← Π(ỹ − η·∇E(ỹ) + ε_k), ε_k ~ N(0, σ_k²), with σ_k decaying
//! geometrically from σ_0 to σ_min and Π the Euclidean projection onto the
//! simplex. ỹ is discretised by LM-guided top-k projection after the last
//! step and, when `cold_rank_every` > 0, also every that many steps
//! (starting with the initialisation); the discrete candidate of lowest
//! energy is returned, the earliest on ties.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::energy::energy_impl;
use super::simplex::{discretize_on_subset, project_simplex};
use super::{
    check_allowed, ids_text, into_output, ColdInit, DecodeConfig, DecodeOutput, EnergyBreakdown, EnergyWeights,
    Observations, Search, TraceRecord,
};
use crate::error::{Error, Result};
use crate::lm::{argmax, softmax, LmParams, SoftSequence, TokenId, Vocabulary};
use crate::oracle::objective;

fn initial_simplex(
    params: &LmParams,
    obs: &Observations,
    allowed: &[TokenId],
    cfg: &DecodeConfig,
) -> Result<Array2<f64>> {
    let (t_len, s) = (cfg.max_len, allowed.len());
    match cfg.cold_init {
        ColdInit::Uniform => Ok(Array2::from_elem((t_len, s), 1.0 / s as f64)),
        ColdInit::Forward => {
            let mut p = Array2::zeros((t_len, s));
            let mut seq = obs.past.clone();
            for t in 0..t_len {
                let logits = params.next_logits(&seq, None)?;
                let sub = allowed.iter().map(|&c| logits[c]).collect();
                let probs = softmax(&sub);
                seq.push(allowed[argmax(probs.iter().copied())]);
                p.row_mut(t).assign(&probs);
            }
            Ok(p)
        }
    }
}

fn record(
    params: &LmParams,
    obs: &Observations,
    p: &Array2<f64>,
    allowed: &[TokenId],
    e: EnergyBreakdown,
    iteration: usize,
) -> Result<TraceRecord> {
    let tokens: Vec<TokenId> = p
        .rows()
        .into_iter()
        .map(|r| allowed[argmax(r.iter().copied())])
        .collect();
    Ok(TraceRecord {
        iteration,
        energy_total: e.total,
        energy_fluency: e.fluency,
        energy_future: e.future,
        candidate_text: ids_text(&tokens),
        objective: objective(params, &tokens, obs)?,
    })
}

type Candidate = (Vec<TokenId>, EnergyBreakdown);

fn discrete_candidate(
    params: &LmParams,
    obs: &Observations,
    p: &Array2<f64>,
    allowed: &[TokenId],
    cfg: &DecodeConfig,
    weights: EnergyWeights,
) -> Result<Candidate> {
    let tokens = discretize_on_subset(p, allowed, params, &obs.past, cfg.top_k)?;
    let one_hot = SoftSequence::one_hot(&tokens, params.config.vocab_size);
    let e = energy_impl(params, one_hot.probs(), None, obs, weights, false)?.0;
    Ok((tokens, e))
}

fn consider(best: &mut Option<Candidate>, cand: Candidate) {
    if best.as_ref().is_none_or(|(_, e)| cand.1.total < e.total) {
        *best = Some(cand);
    }
}

/// Token-level COLD over the `allowed` ids (ascending). Trace entry `k`
/// holds the soft energy before step `k`; the final entry is after the last
/// step. The returned energy is that of the discretised hypothesis.
pub fn cold(params: &LmParams, obs: &Observations, allowed: &[TokenId], cfg: &DecodeConfig) -> Result<Search> {
    cfg.validate()?;
    check_allowed(params, allowed)?;
    let weights = cfg.weights()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut p = initial_simplex(params, obs, allowed, cfg)?;
    let mut trace = Vec::with_capacity(cfg.cold_iters + 1);
    let mut best = None;

    for k in 0..=cfg.cold_iters {
        let want_grad = k < cfg.cold_iters;
        let (e, grad) = energy_impl(params, &p, Some(allowed), obs, weights, want_grad)?;
        if !e.total.is_finite() {
            return Err(Error::NonFinite {
                what: "cold energy",
                iteration: k,
            });
        }
        trace.push(record(params, obs, &p, allowed, e, k)?);
        if cfg.cold_rank_every > 0 && k % cfg.cold_rank_every == 0 && k < cfg.cold_iters {
            consider(&mut best, discrete_candidate(params, obs, &p, allowed, cfg, weights)?);
        }
        let Some(grad) = grad else { break };
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                what: "cold energy gradient",
                iteration: k,
            });
        }
        let sigma = cfg.sigma_at(k);
        let mut next = &p - &(&grad * cfg.cold_step);
        if sigma > 0.0 {
            next.mapv_inplace(|x| {
                let z: f64 = StandardNormal.sample(&mut rng);
                x + sigma * z
            });
        }
        for (mut row, src) in p.rows_mut().into_iter().zip(next.rows()) {
            row.assign(&project_simplex(src));
            debug_assert!((row.sum() - 1.0).abs() < 1e-6);
        }
    }

    consider(&mut best, discrete_candidate(params, obs, &p, allowed, cfg, weights)?);
    let (tokens, energy) = best.expect("final candidate");
    Ok(Search {
        objective: objective(params, &tokens, obs)?,
        tokens,
        energy,
        trace,
    })
}

/// COLD over ordinary words, returning text.
pub fn decode_cold(
    params: &LmParams,
    vocab: &Vocabulary,
    o1: &str,
    o2: &str,
    cfg: &DecodeConfig,
) -> Result<DecodeOutput> {
    let obs = Observations::new(vocab, o1, o2)?;
    let search = cold(params, &obs, &vocab.word_ids(), cfg)?;
    Ok(into_output(search, vocab))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoding::Strategy;
    use crate::lm::ModelConfig;

    fn params(seed: u64) -> LmParams {
        let cfg = ModelConfig {
            vocab_size: 20,
            d_model: 16,
            n_layers: 2,
            n_heads: 2,
            d_ff: 32,
            max_len: 32,
        };
        let mut p = LmParams::init(cfg, seed).unwrap();
        p.head_scale[[0, 0]] = 20.0;
        p
    }

    fn obs(seed: usize) -> Observations {
        Observations {
            past: vec![16, seed % 12, 3],
            future: vec![5, (seed + 3) % 12, 7],
        }
    }

    const ALLOWED: [TokenId; 12] = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11];

    fn cfg() -> DecodeConfig {
        DecodeConfig {
            strategy: Strategy::Cold,
            max_len: 3,
            cold_iters: 30,
            cold_step: 0.05,
            ..DecodeConfig::default()
        }
    }

    #[test]
    fn null_dynamics_discretise_the_initialisation() {
        for init in [ColdInit::Uniform, ColdInit::Forward] {
            let p = params(1);
            let o = obs(1);
            let c = DecodeConfig {
                cold_step: 0.0,
                cold_sigma0: 0.0,
                cold_sigma_min: 0.0,
                cold_init: init,
                ..cfg()
            };
            let out = cold(&p, &o, &ALLOWED, &c).unwrap();
            let p0 = initial_simplex(&p, &o, &ALLOWED, &c).unwrap();
            let expected = discretize_on_subset(&p0, &ALLOWED, &p, &o.past, c.top_k).unwrap();
            assert_eq!(out.tokens, expected);
            let first = out.trace[0].energy_total;
            assert!(out.trace.iter().all(|r| r.energy_total == first));
        }
    }

    #[test]
    fn seeded_runs_are_identical_and_seeds_matter() {
        let p = params(2);
        let a = cold(&p, &obs(2), &ALLOWED, &cfg()).unwrap();
        let b = cold(&p, &obs(2), &ALLOWED, &cfg()).unwrap();
        assert_eq!(a, b);
        let c = cold(&p, &obs(2), &ALLOWED, &DecodeConfig { seed: 99, ..cfg() }).unwrap();
        assert_ne!(a.trace, c.trace);
    }

    #[test]
    fn trace_has_one_entry_per_step_plus_final() {
        let out = cold(&params(3), &obs(3), &ALLOWED, &cfg()).unwrap();
        assert_eq!(out.trace.len(), 31);
        assert_eq!(out.tokens.len(), 3);
        assert!((out.energy.total + out.objective).abs() < 1e-9);
    }

    #[test]
    fn noiseless_descent_rarely_increases_energy() {
        let (mut down, mut steps) = (0, 0);
        for seed in 0..10 {
            let c = DecodeConfig {
                cold_step: 0.002,
                cold_sigma0: 0.0,
                cold_sigma_min: 0.0,
                cold_iters: 50,
                ..cfg()
            };
            let out = cold(&params(seed), &obs(seed as usize), &ALLOWED, &c).unwrap();
            for w in out.trace.windows(2) {
                steps += 1;
                if w[1].energy_total <= w[0].energy_total + 1e-12 {
                    down += 1;
                }
            }
        }
        assert!(down as f64 >= 0.95 * steps as f64, "{down}/{steps}");
    }
}
