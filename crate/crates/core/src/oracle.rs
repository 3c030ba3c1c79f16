//! Exhaustive search over short hypotheses, used to audit the gradient-based
//! decoders on tiny problems.

use crate::decoding::Observations;
use crate::error::{Error, Result};
use crate::lm::{Conditioning, LmParams, TokenId};

/// Largest `|subset|^max_len` the oracle agrees to enumerate.
pub const ENUMERATION_BUDGET: u128 = 1_000_000;

/// Ranking objective `log P(h | o1) + log P(o2 | o1, h)`. By the chain rule
/// this is the log-probability of `h ++ o2` after `<bos> o1`, so one forward
/// pass suffices.
pub fn objective(params: &LmParams, h: &[TokenId], obs: &Observations) -> Result<f64> {
    let mut target = h.to_vec();
    target.extend_from_slice(&obs.future);
    params.log_prob(&target, Conditioning::Tokens(&obs.past))
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub tokens: Vec<TokenId>,
    pub objective: f64,
    pub evaluated: usize,
}

/// The best hypothesis of length 1..=`max_len` over `subset`. Equal
/// objectives resolve to the lexicographically smallest token sequence, so
/// the result does not depend on enumeration order.
pub fn brute_force_best(
    params: &LmParams,
    obs: &Observations,
    max_len: usize,
    subset: &[TokenId],
) -> Result<OracleResult> {
    if subset.is_empty() || max_len == 0 {
        return Err(Error::Input("oracle needs a nonempty subset and max_len ≥ 1".into()));
    }
    params.check_ids(subset)?;
    let required = (subset.len() as u128).checked_pow(max_len as u32).unwrap_or(u128::MAX);
    if required > ENUMERATION_BUDGET {
        return Err(Error::Budget {
            required,
            limit: ENUMERATION_BUDGET,
        });
    }
    let mut best: Option<(Vec<TokenId>, f64)> = None;
    let mut evaluated = 0;
    let s = subset.len();
    for len in 1..=max_len {
        let count = s.pow(len as u32);
        for code in 0..count {
            // base-|subset| digits, most significant first
            let mut h = vec![0; len];
            let mut rest = code;
            for slot in h.iter_mut().rev() {
                *slot = subset[rest % s];
                rest /= s;
            }
            let score = objective(params, &h, obs)?;
            evaluated += 1;
            let better = match &best {
                None => true,
                Some((bh, bs)) => score > *bs || (score == *bs && h < *bh),
            };
            if better {
                best = Some((h, score));
            }
        }
    }
    let (tokens, objective) = best.expect("at least one candidate");
    Ok(OracleResult {
        tokens,
        objective,
        evaluated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::ModelConfig;

    const V: usize = 16;

    fn params(scale: f64) -> LmParams {
        let cfg = ModelConfig {
            vocab_size: V,
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            d_ff: 16,
            max_len: 24,
        };
        let mut p = LmParams::init(cfg, 11).unwrap();
        p.head_scale[[0, 0]] = scale;
        p
    }

    fn obs(future: usize) -> Observations {
        Observations {
            past: vec![12, 1, 2],
            future: (3..3 + future).collect(),
        }
    }

    #[test]
    fn uniform_objective_is_closed_form() {
        let v = objective(&params(0.0), &[5, 6], &obs(3)).unwrap();
        assert!((v + 5.0 * (V as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn objective_is_sum_of_two_log_probs() {
        let p = params(12.0);
        let o = obs(3);
        let h = [7, 9];
        let mut cond = o.past.clone();
        cond.extend_from_slice(&h);
        let a = p.log_prob(&h, Conditioning::Tokens(&o.past)).unwrap();
        let b = p.log_prob(&o.future, Conditioning::Tokens(&cond)).unwrap();
        assert!((objective(&p, &h, &o).unwrap() - (a + b)).abs() < 1e-9);
    }

    #[test]
    fn appending_lowers_the_hypothesis_term() {
        let p = params(12.0);
        let o = obs(2);
        let a = p.log_prob(&[7], Conditioning::Tokens(&o.past)).unwrap();
        let b = p.log_prob(&[7, 4], Conditioning::Tokens(&o.past)).unwrap();
        assert!(b < a);
    }

    #[test]
    fn single_token_subset_enumerates_two_candidates() {
        let p = params(12.0);
        let o = obs(2);
        let r = brute_force_best(&p, &o, 2, &[4]).unwrap();
        assert_eq!(r.evaluated, 2);
        let one = objective(&p, &[4], &o).unwrap();
        let two = objective(&p, &[4, 4], &o).unwrap();
        assert_eq!(r.objective, one.max(two));
    }

    #[test]
    fn uniform_model_returns_smallest_shortest() {
        let r = brute_force_best(&params(0.0), &obs(2), 3, &[2, 5, 9]).unwrap();
        assert_eq!(r.tokens, vec![2]);
        assert_eq!(r.evaluated, 3 + 9 + 27);
    }

    #[test]
    fn budget_guard_refuses_large_problems() {
        let subset: Vec<TokenId> = (0..11).collect();
        match brute_force_best(&params(0.0), &obs(2), 6, &subset) {
            Err(Error::Budget { required, limit }) => {
                assert_eq!(required, 11u128.pow(6));
                assert_eq!(limit, ENUMERATION_BUDGET);
            }
            other => panic!("expected budget error, got {other:?}"),
        }
    }

    #[test]
    fn oracle_dominates_every_candidate() {
        let p = params(15.0);
        let o = obs(2);
        let subset = [0, 3, 6, 8];
        let r = brute_force_best(&p, &o, 2, &subset).unwrap();
        for a in subset {
            assert!(objective(&p, &[a], &o).unwrap() <= r.objective);
            for b in subset {
                assert!(objective(&p, &[a, b], &o).unwrap() <= r.objective);
            }
        }
    }
}
