use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::lm::{LmParams, SoftSequence, TokenId};

/// Euclidean projection onto the probability simplex (sort-based). Inputs
/// that already are distributions to within 1e-12 are returned unchanged.
pub fn project_simplex(v: ArrayView1<f64>) -> Array1<f64> {
    let n = v.len();
    if n == 0 {
        return Array1::zeros(0);
    }
    if v.iter().all(|&x| x >= -1e-12) && (v.sum() - 1.0).abs() <= 1e-12 {
        return v.to_owned();
    }
    let mut u: Vec<f64> = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cumsum += uj;
        let t = (cumsum - 1.0) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        }
    }
    v.mapv(|x| (x - theta).max(0.0))
}

/// LM-guided top-k discretisation over the full vocabulary.
pub fn discretize(soft_h: &SoftSequence, params: &LmParams, prefix: &[TokenId], k: usize) -> Result<Vec<TokenId>> {
    let cols: Vec<TokenId> = (0..soft_h.vocab_size()).collect();
    discretize_on_subset(soft_h.probs(), &cols, params, prefix, k)
}

/// Left to right: position t may only take one of the k allowed tokens the
/// LM ranks highest after `prefix` and the tokens chosen so far; among those,
/// the one with the largest mass in `probs[t]` wins. Ties go to the smallest
/// id throughout. With k ≥ |cols| this is the per-position argmax.
pub fn discretize_on_subset(
    probs: &Array2<f64>,
    cols: &[TokenId],
    params: &LmParams,
    prefix: &[TokenId],
    k: usize,
) -> Result<Vec<TokenId>> {
    if k == 0 {
        return Err(Error::Config("top_k must be at least 1".into()));
    }
    if probs.ncols() != cols.len() {
        return Err(Error::Input(
            "soft hypothesis width does not match the allowed set".into(),
        ));
    }
    let mut seq = prefix.to_vec();
    let mut out = Vec::with_capacity(probs.nrows());
    for row in probs.rows() {
        let pick = if k >= cols.len() {
            crate::lm::argmax(row.iter().copied())
        } else {
            let logits = params.next_logits(&seq, None)?;
            let mut order: Vec<usize> = (0..cols.len()).collect();
            order.sort_by(|&a, &b| logits[cols[b]].total_cmp(&logits[cols[a]]).then(a.cmp(&b)));
            order.truncate(k);
            order.sort_unstable();
            let mut best = order[0];
            for &j in &order[1..] {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best
        };
        out.push(cols[pick]);
        seq.push(cols[pick]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::ModelConfig;
    use ndarray::array;
    use proptest::prelude::*;

    fn params() -> LmParams {
        let cfg = ModelConfig {
            vocab_size: 20,
            d_model: 16,
            n_layers: 1,
            n_heads: 2,
            d_ff: 16,
            max_len: 32,
        };
        let mut p = LmParams::init(cfg, 3).unwrap();
        p.head_scale[[0, 0]] = 20.0;
        p
    }

    #[test]
    fn projection_examples() {
        assert_eq!(project_simplex(array![0.2, 0.3, 0.5].view()), array![0.2, 0.3, 0.5]);
        let p = project_simplex(array![2.0, 0.0, 0.0].view());
        assert_eq!(p, array![1.0, 0.0, 0.0]);
        let p = project_simplex(array![0.5, 0.5, 0.5].view());
        for x in p.iter() {
            assert!((x - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn projection_lands_on_simplex(v in prop::collection::vec(-5.0f64..5.0, 1..30)) {
            let p = project_simplex(Array1::from(v).view());
            prop_assert!(p.iter().all(|&x| x >= 0.0));
            prop_assert!((p.sum() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn projection_is_idempotent(v in prop::collection::vec(-5.0f64..5.0, 1..30)) {
            let p = project_simplex(Array1::from(v).view());
            let q = project_simplex(p.view());
            for (a, b) in p.iter().zip(q.iter()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn full_k_is_argmax_of_one_hot() {
        let p = params();
        let ids = [4, 17, 0, 9];
        let soft = SoftSequence::one_hot(&ids, 20);
        assert_eq!(discretize(&soft, &p, &[1, 2], 20).unwrap(), ids.to_vec());
    }

    #[test]
    fn k_one_is_greedy_continuation() {
        let p = params();
        let soft = SoftSequence::one_hot(&[4, 17, 0, 9], 20);
        let out = discretize(&soft, &p, &[1, 2], 1).unwrap();
        assert_eq!(out.len(), 4);
        let mut seq = vec![1, 2];
        for &tok in &out {
            let row = p.next_logits(&seq, None).unwrap();
            assert_eq!(tok, crate::lm::argmax(row.iter().copied()));
            seq.push(tok);
        }
    }
}
