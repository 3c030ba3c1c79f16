//! Forward/backward logit mixing.
//!
//! 1. Forward pass: hypothesis logits ỹ_1..T from greedy generation after
//!    `<bos> o1`, restricted to the allowed tokens.
//! 2. Backward pass: cross-entropy of the real o2 after `<bos> o1 softmax(ỹ)`;
//!    ỹ ← ỹ − λ·∇_ỹ.
//! 3. Forward re-pass, left to right: f_t are the LM logits after `<bos> o1`
//!    and the argmax tokens of the already-mixed ỹ_<t; ỹ_t ← γ·f_t + (1−γ)·ỹ_t.
//! 4. Every iteration yields the per-position argmax as a candidate; the
//!    best candidate by ranking objective wins, earliest on ties.
//!
//! Feeding discretised previous positions in the re-pass makes γ = 1
//! reproduce the initial forward pass exactly.

use ndarray::{Array1, Array2, Axis};

use super::energy::energy_impl;
use super::{
    check_allowed, ids_text, into_output, DecodeConfig, DecodeOutput, EnergyWeights, Observations, Search, TraceRecord,
};
use crate::error::{Error, Result};
use crate::lm::{argmax, softmax, LmParams, SoftSequence, TokenId, Vocabulary};
use crate::oracle::objective;

fn softmax_rows(y: &Array2<f64>) -> Array2<f64> {
    let mut p = y.clone();
    for mut row in p.rows_mut() {
        let s = softmax(&row.to_owned());
        row.assign(&s);
    }
    p
}

fn row_argmax(y: &Array2<f64>, cols: &[TokenId]) -> Vec<TokenId> {
    y.rows().into_iter().map(|r| cols[argmax(r.iter().copied())]).collect()
}

fn forward_logits_at(params: &LmParams, seq: &[TokenId], cols: &[TokenId]) -> Result<Array1<f64>> {
    let logits = params.next_logits(seq, None)?;
    Ok(cols.iter().map(|&c| logits[c]).collect())
}

struct Evaluated {
    tokens: Vec<TokenId>,
    objective: f64,
    record: TraceRecord,
}

fn evaluate(
    params: &LmParams,
    obs: &Observations,
    y: &Array2<f64>,
    cols: &[TokenId],
    weights: EnergyWeights,
    iteration: usize,
) -> Result<Evaluated> {
    let tokens = row_argmax(y, cols);
    let obj = objective(params, &tokens, obs)?;
    let e = energy_impl(params, &softmax_rows(y), Some(cols), obs, weights, false)?.0;
    Ok(Evaluated {
        record: TraceRecord {
            iteration,
            energy_total: e.total,
            energy_fluency: e.fluency,
            energy_future: e.future,
            candidate_text: ids_text(&tokens),
            objective: obj,
        },
        tokens,
        objective: obj,
    })
}

/// Token-level DELOREAN over the `allowed` ids (ascending).
pub fn delorean(params: &LmParams, obs: &Observations, allowed: &[TokenId], cfg: &DecodeConfig) -> Result<Search> {
    cfg.validate()?;
    check_allowed(params, allowed)?;
    let weights = cfg.weights()?;
    let (t_len, s) = (cfg.max_len, allowed.len());

    let mut y = Array2::zeros((t_len, s));
    let mut seq = obs.past.clone();
    for t in 0..t_len {
        let f = forward_logits_at(params, &seq, allowed)?;
        seq.push(allowed[argmax(f.iter().copied())]);
        y.row_mut(t).assign(&f);
    }

    let first = evaluate(params, obs, &y, allowed, weights, 0)?;
    let mut trace = vec![first.record.clone()];
    let mut best = (first.tokens, first.objective);
    let future_only = EnergyWeights {
        fluency: 0.0,
        future: 1.0,
    };
    for k in 1..=cfg.delorean_iters {
        let p = softmax_rows(&y);
        let (_, gp) = energy_impl(params, &p, Some(allowed), obs, future_only, true)?;
        let gp = gp.expect("gradient requested");
        // chain rule through the row softmax
        let dot = (&p * &gp).sum_axis(Axis(1)).insert_axis(Axis(1));
        let gy = &p * &(&gp - &dot);
        if gy.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "delorean backward gradient",
                iteration: k,
            });
        }
        y.scaled_add(-cfg.delorean_step, &gy);

        let gamma = cfg.delorean_mix;
        let mut seq = obs.past.clone();
        for t in 0..t_len {
            let f = forward_logits_at(params, &seq, allowed)?;
            let mixed = &f * gamma + &y.row(t) * (1.0 - gamma);
            seq.push(allowed[argmax(mixed.iter().copied())]);
            y.row_mut(t).assign(&mixed);
        }

        let ev = evaluate(params, obs, &y, allowed, weights, k)?;
        if ev.objective > best.1 {
            best = (ev.tokens, ev.objective);
        }
        trace.push(ev.record);
    }
    let (tokens, obj) = best;
    let energy = super::energy::energy_impl(
        params,
        SoftSequence::one_hot(&tokens, params.config.vocab_size).probs(),
        None,
        obs,
        weights,
        false,
    )?
    .0;
    Ok(Search {
        tokens,
        objective: obj,
        energy,
        trace,
    })
}

/// DELOREAN over ordinary words, returning text.
pub fn decode_delorean(
    params: &LmParams,
    vocab: &Vocabulary,
    o1: &str,
    o2: &str,
    cfg: &DecodeConfig,
) -> Result<DecodeOutput> {
    let obs = Observations::new(vocab, o1, o2)?;
    let search = delorean(params, &obs, &vocab.word_ids(), cfg)?;
    Ok(into_output(search, vocab))
}
