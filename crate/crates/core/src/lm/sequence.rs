use ndarray::Array2;

use super::vocab::TokenId;
use crate::error::{Error, Result};

/// Tolerance on row sums accepted from callers.
pub const SIMPLEX_INPUT_TOL: f64 = 1e-4;

/// Per-position probability distributions over the vocabulary (T × V).
#[derive(Debug, Clone, PartialEq)]
pub struct SoftSequence {
    probs: Array2<f64>,
}

impl SoftSequence {
    /// Validates that each row is a distribution (entries in [0, 1], row sum
    /// within [`SIMPLEX_INPUT_TOL`] of one).
    pub fn new(probs: Array2<f64>) -> Result<Self> {
        check_simplex_rows(&probs, SIMPLEX_INPUT_TOL)?;
        Ok(Self { probs })
    }

    pub fn one_hot(ids: &[TokenId], vocab_size: usize) -> Self {
        let mut probs = Array2::zeros((ids.len(), vocab_size));
        for (t, &id) in ids.iter().enumerate() {
            probs[[t, id]] = 1.0;
        }
        Self { probs }
    }

    pub fn uniform(len: usize, vocab_size: usize) -> Self {
        Self {
            probs: Array2::from_elem((len, vocab_size), 1.0 / vocab_size as f64),
        }
    }

    pub fn len(&self) -> usize {
        self.probs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.nrows() == 0
    }

    pub fn vocab_size(&self) -> usize {
        self.probs.ncols()
    }

    pub fn probs(&self) -> &Array2<f64> {
        &self.probs
    }

    pub fn into_probs(self) -> Array2<f64> {
        self.probs
    }

    /// Per-position argmax, ties to the smallest id.
    pub fn argmax(&self) -> Vec<TokenId> {
        self.probs
            .rows()
            .into_iter()
            .map(|r| argmax(r.iter().copied()))
            .collect()
    }
}

pub(crate) fn check_simplex_rows(probs: &Array2<f64>, tol: f64) -> Result<()> {
    for (t, row) in probs.rows().into_iter().enumerate() {
        if let Some(bad) = row.iter().find(|p| !p.is_finite() || **p < -tol || **p > 1.0 + tol) {
            return Err(Error::Input(format!(
                "soft position {t} has entry {bad} outside [0, 1]"
            )));
        }
        let total = row.sum();
        if (total - 1.0).abs() > tol {
            return Err(Error::Input(format!("soft position {t} sums to {total}, not 1")));
        }
    }
    Ok(())
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in values.into_iter().enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn one_hot_rows_are_simplices() {
        let s = SoftSequence::one_hot(&[2, 0, 3], 5);
        assert_eq!(s.argmax(), vec![2, 0, 3]);
        check_simplex_rows(s.probs(), 1e-12).unwrap();
    }

    #[test]
    fn rejects_rows_off_the_simplex() {
        assert!(SoftSequence::new(array![[0.5, 0.6]]).is_err());
        assert!(SoftSequence::new(array![[1.2, -0.2]]).is_err());
        assert!(SoftSequence::new(array![[0.25, 0.75]]).is_ok());
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax([0.1, 0.4, 0.4]), 1);
    }
}
