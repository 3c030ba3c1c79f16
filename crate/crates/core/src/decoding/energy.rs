use ndarray::Array2;
use serde::Serialize;

use super::Observations;
use crate::autograd::Graph;
use crate::error::{Error, Result};
use crate::lm::model::bind;
use crate::lm::sequence::{check_simplex_rows, SIMPLEX_INPUT_TOL};
use crate::lm::{LmParams, SoftSequence, TokenId};

/// Non-negative weights on the fluency and future terms, not both zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyWeights {
    pub fluency: f64,
    pub future: f64,
}

impl EnergyWeights {
    pub fn new(fluency: f64, future: f64) -> Result<Self> {
        if !(fluency >= 0.0 && future >= 0.0 && fluency.is_finite() && future.is_finite()) {
            return Err(Error::Config("energy weights must be finite and non-negative".into()));
        }
        if fluency == 0.0 && future == 0.0 {
            return Err(Error::Config("energy weights must not both be zero".into()));
        }
        Ok(Self { fluency, future })
    }
}

/// Energy terms in nats.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyBreakdown {
    pub total: f64,
    pub fluency: f64,
    pub future: f64,
}

/// Energy of a soft hypothesis over the full vocabulary.
///
/// - fluency: Σ_t −Σ_v p_t[v]·log q_t[v], where q_t is the model's next-token
///   distribution after `<bos> o1` and the expected embeddings of p_<t;
/// - future: −log P(o2 | o1, soft h);
/// - total: weighted sum.
pub fn energy(
    params: &LmParams,
    soft_h: &SoftSequence,
    obs: &Observations,
    weights: EnergyWeights,
) -> Result<EnergyBreakdown> {
    let probs = soft_h.probs();
    if probs.ncols() != params.config.vocab_size {
        return Err(Error::Input(format!(
            "soft hypothesis has {} columns, vocabulary has {}",
            probs.ncols(),
            params.config.vocab_size
        )));
    }
    Ok(energy_impl(params, probs, None, obs, weights, false)?.0)
}

/// Energy and its gradient with respect to `probs` (T × |cols|), whose
/// columns correspond to the token ids in `cols`.
pub fn energy_on_subset(
    params: &LmParams,
    probs: &Array2<f64>,
    cols: &[TokenId],
    obs: &Observations,
    weights: EnergyWeights,
) -> Result<(EnergyBreakdown, Array2<f64>)> {
    if probs.ncols() != cols.len() {
        return Err(Error::Input(
            "soft hypothesis width does not match the allowed set".into(),
        ));
    }
    params.check_ids(cols)?;
    let (e, g) = energy_impl(params, probs, Some(cols), obs, weights, true)?;
    Ok((e, g.expect("gradient requested")))
}

pub(super) fn energy_impl(
    params: &LmParams,
    probs: &Array2<f64>,
    cols: Option<&[TokenId]>,
    obs: &Observations,
    w: EnergyWeights,
    want_grad: bool,
) -> Result<(EnergyBreakdown, Option<Array2<f64>>)> {
    check_simplex_rows(probs, SIMPLEX_INPUT_TOL)?;
    let t_len = probs.nrows();
    let (past, future) = (&obs.past, &obs.future);
    if t_len == 0 || past.is_empty() || future.is_empty() {
        return Err(Error::Input(
            "energy needs a past, a future and a nonempty hypothesis".into(),
        ));
    }
    params.check_ids(past)?;
    params.check_ids(future)?;
    params.check_len(past.len() + t_len + future.len() - 1)?;

    let mut g = Graph::new();
    let b = bind(&mut g, params, false);
    let p = g.param(probs.clone());
    let mut parts = vec![b.embed_tokens(&mut g, past), b.embed_mixture(&mut g, p, cols)];
    if future.len() > 1 {
        parts.push(b.embed_tokens(&mut g, &future[..future.len() - 1]));
    }
    let x = g.concat_rows(&parts);
    let pass = b.run(&mut g, x);
    let m = past.len();

    let rows = g.slice_rows(pass.logits, m - 1, m - 1 + t_len);
    let lq = g.log_softmax(rows);
    let lq = match cols {
        Some(c) => g.select_cols(lq, c),
        None => lq,
    };
    let cross = g.mul(p, lq);
    let cross = g.sum(cross);
    let fluency = g.scale(cross, -1.0);

    let lp = b.target_log_prob(&mut g, pass.logits, m - 1 + t_len, future);
    let fut = g.scale(lp, -1.0);

    let a = g.scale(fluency, w.fluency);
    let c = g.scale(fut, w.future);
    let total = g.add(a, c);
    let e = EnergyBreakdown {
        total: g.scalar(total),
        fluency: g.scalar(fluency),
        future: g.scalar(fut),
    };
    let grad = want_grad.then(|| g.backward(total).take_or_zeros(p, probs.dim()));
    Ok((e, grad))
}
