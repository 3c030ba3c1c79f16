//! Generation metrics: corpus BLEU-4, ROUGE-L, CIDEr-D, an exact-match
//! METEOR variant and a greedy-matching embedding score.
//!
//! Texts are normalised (lowercased, punctuation split off, whitespace
//! collapsed) before scoring. All scores are ×100 except CIDEr-D (×10).
//!
//! - BLEU-4: corpus-level clipped n-gram precisions with a brevity penalty
//!   against the closest reference length. With smoothing on, a zero match
//!   count at order n ≥ 2 is replaced by 1/(2·candidate n-grams). Orders for
//!   which the whole corpus has no candidate n-gram are left out of the
//!   geometric mean.
//! - ROUGE-L: LCS F-measure with β = 1, max over references, corpus mean.
//! - CIDEr-D: TF-IDF n-gram cosine (n = 1..4) with clipping and a Gaussian
//!   length penalty (σ = 6); document frequencies come from the references
//!   of the evaluated corpus.
//! - meteor_simple: exact unigram matches aligned leftmost-greedily,
//!   F_mean = 10PR/(R+9P), penalty 0.5·(chunks/matches)³.
//! - embed_score: greedy cosine matching of per-token vectors, F1. Not
//!   comparable with BERTScore.

use std::collections::{HashMap, HashSet};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::{tokenize, AbductiveInstance};
use crate::error::{Error, Result};
use crate::lm::{LmParams, Vocabulary};
use crate::text;

type Ngram<'a> = &'a [String];

fn tokens(s: &str) -> Vec<String> {
    text::words(s)
}

fn ngram_counts(words: &[String], n: usize) -> HashMap<Ngram<'_>, usize> {
    let mut m = HashMap::new();
    if words.len() >= n {
        for w in words.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

fn check_shapes<R: AsRef<[String]>>(n_pred: usize, references: &[R]) -> Result<()> {
    if n_pred != references.len() {
        return Err(Error::Input(format!(
            "{n_pred} predictions but {} reference lists",
            references.len()
        )));
    }
    if let Some(i) = references.iter().position(|r| r.as_ref().is_empty()) {
        return Err(Error::Input(format!("instance {i} has no references")));
    }
    Ok(())
}

/// Corpus BLEU-4 with smoothing.
pub fn bleu4<R: AsRef<[String]>>(predictions: &[String], references: &[R]) -> Result<f64> {
    bleu4_with(predictions, references, true)
}

pub fn bleu4_with<R: AsRef<[String]>>(predictions: &[String], references: &[R], smoothing: bool) -> Result<f64> {
    check_shapes(predictions.len(), references)?;
    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    let (mut cand_len, mut ref_len) = (0usize, 0usize);
    for (pred, refs) in predictions.iter().zip(references) {
        let p = tokens(pred);
        let rs: Vec<Vec<String>> = refs.as_ref().iter().map(|r| tokens(r)).collect();
        cand_len += p.len();
        // closest reference length, shorter on ties
        ref_len += rs
            .iter()
            .map(Vec::len)
            .min_by_key(|&l| (l.abs_diff(p.len()), l))
            .expect("nonempty references");
        for n in 1..=4 {
            let pc = ngram_counts(&p, n);
            let mut max_ref: HashMap<Ngram, usize> = HashMap::new();
            for r in &rs {
                for (g, c) in ngram_counts(r, n) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(c);
                }
            }
            totals[n - 1] += pc.values().sum::<usize>();
            matches[n - 1] += pc
                .iter()
                .map(|(g, &c)| c.min(*max_ref.get(g).unwrap_or(&0)))
                .sum::<usize>();
        }
    }
    if cand_len == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    let mut orders = 0;
    for n in 0..4 {
        if totals[n] == 0 {
            continue;
        }
        let p = if matches[n] > 0 {
            matches[n] as f64 / totals[n] as f64
        } else if smoothing && n > 0 {
            1.0 / (2.0 * totals[n] as f64)
        } else {
            return Ok(0.0);
        };
        log_sum += p.ln();
        orders += 1;
    }
    let bp = if cand_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    };
    Ok(100.0 * bp * (log_sum / orders as f64).exp())
}

fn lcs(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    for x in a {
        let mut cur = vec![0usize; b.len() + 1];
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        prev = cur;
    }
    prev[b.len()]
}

/// Sentence ROUGE-L F1 (×100), max over references.
pub fn rouge_l_sentence(prediction: &str, references: &[String]) -> f64 {
    let p = tokens(prediction);
    references
        .iter()
        .map(|r| {
            let r = tokens(r);
            let l = lcs(&p, &r);
            if l == 0 {
                return 0.0;
            }
            let (prec, rec) = (l as f64 / p.len() as f64, l as f64 / r.len() as f64);
            100.0 * 2.0 * prec * rec / (prec + rec)
        })
        .fold(0.0, f64::max)
}

/// Corpus mean of sentence ROUGE-L.
pub fn rouge_l<R: AsRef<[String]>>(predictions: &[String], references: &[R]) -> Result<f64> {
    check_shapes(predictions.len(), references)?;
    Ok(mean(
        predictions
            .iter()
            .zip(references)
            .map(|(p, r)| rouge_l_sentence(p, r.as_ref())),
    ))
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for x in xs {
        s += x;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Leftmost-greedy exact-match alignment: (matches, chunks).
fn align(pred: &[String], reference: &[String]) -> (usize, usize) {
    let mut used = vec![false; reference.len()];
    let mut mapped: Vec<Option<usize>> = Vec::with_capacity(pred.len());
    for w in pred {
        let hit = (0..reference.len()).find(|&j| !used[j] && reference[j] == *w);
        if let Some(j) = hit {
            used[j] = true;
        }
        mapped.push(hit);
    }
    let matches = mapped.iter().flatten().count();
    let mut chunks = 0;
    let mut prev: Option<usize> = None;
    for m in &mapped {
        match (prev, m) {
            (Some(p), Some(j)) if *j == p + 1 => {}
            (_, Some(_)) => chunks += 1,
            _ => {}
        }
        prev = *m;
    }
    (matches, chunks)
}

/// Sentence meteor_simple (×100), max over references.
pub fn meteor_simple_sentence(prediction: &str, references: &[String]) -> f64 {
    let p = tokens(prediction);
    references
        .iter()
        .map(|r| {
            let r = tokens(r);
            let (m, chunks) = align(&p, &r);
            if m == 0 {
                return 0.0;
            }
            let prec = m as f64 / p.len() as f64;
            let rec = m as f64 / r.len() as f64;
            let fmean = 10.0 * prec * rec / (rec + 9.0 * prec);
            let penalty = 0.5 * (chunks as f64 / m as f64).powi(3);
            100.0 * fmean * (1.0 - penalty)
        })
        .fold(0.0, f64::max)
}

pub fn meteor_simple<R: AsRef<[String]>>(predictions: &[String], references: &[R]) -> Result<f64> {
    check_shapes(predictions.len(), references)?;
    Ok(mean(
        predictions
            .iter()
            .zip(references)
            .map(|(p, r)| meteor_simple_sentence(p, r.as_ref())),
    ))
}

/// Score a perfect prediction of `len` tokens receives.
pub fn meteor_simple_identity(len: usize) -> f64 {
    100.0 * (1.0 - 0.5 / (len as f64).powi(3))
}

type TfIdf<'a> = [HashMap<Ngram<'a>, f64>; 4];

struct Cooked<'a> {
    vec: TfIdf<'a>,
    norm: [f64; 4],
    len: usize,
}

fn cook<'a>(words: &'a [String], df: &HashMap<Ngram<'a>, f64>, log_docs: f64) -> Cooked<'a> {
    let mut vec: TfIdf<'a> = Default::default();
    let mut norm = [0.0; 4];
    for n in 1..=4 {
        for (g, c) in ngram_counts(words, n) {
            let d = df.get(g).copied().unwrap_or(0.0).max(1.0).ln();
            let v = c as f64 * (log_docs - d);
            norm[n - 1] += v * v;
            vec[n - 1].insert(g, v);
        }
    }
    Cooked {
        vec,
        norm: norm.map(f64::sqrt),
        len: words.len(),
    }
}

/// Corpus CIDEr-D (×10); document frequencies from `references`.
pub fn cider<R: AsRef<[String]>>(predictions: &[String], references: &[R]) -> Result<f64> {
    check_shapes(predictions.len(), references)?;
    const SIGMA: f64 = 6.0;
    let preds: Vec<Vec<String>> = predictions.iter().map(|p| tokens(p)).collect();
    let refs: Vec<Vec<Vec<String>>> = references
        .iter()
        .map(|rs| rs.as_ref().iter().map(|r| tokens(r)).collect())
        .collect();
    let mut df: HashMap<Ngram, f64> = HashMap::new();
    for rs in &refs {
        let mut seen: HashSet<Ngram> = HashSet::new();
        for r in rs {
            for n in 1..=4 {
                seen.extend(ngram_counts(r, n).into_keys());
            }
        }
        for g in seen {
            *df.entry(g).or_insert(0.0) += 1.0;
        }
    }
    let log_docs = (refs.len() as f64).ln();
    let scores = preds.iter().zip(&refs).map(|(p, rs)| {
        let hyp = cook(p, &df, log_docs);
        let mut total = 0.0;
        for r in rs {
            let rc = cook(r, &df, log_docs);
            let delta = hyp.len as f64 - rc.len as f64;
            let penalty = (-(delta * delta) / (2.0 * SIGMA * SIGMA)).exp();
            for n in 0..4 {
                let mut val: f64 = hyp.vec[n]
                    .iter()
                    .map(|(g, &hv)| {
                        let rv = rc.vec[n].get(g).copied().unwrap_or(0.0);
                        hv.min(rv) * rv
                    })
                    .sum();
                if hyp.norm[n] != 0.0 && rc.norm[n] != 0.0 {
                    val /= hyp.norm[n] * rc.norm[n];
                }
                total += val * penalty / 4.0;
            }
        }
        10.0 * total / rs.len() as f64
    });
    Ok(mean(scores))
}

/// Per-token vectors for a text.
pub trait TokenEncoder {
    fn encode(&self, text: &str) -> Array2<f64>;
}

/// Last-block hidden states of the toy LM over the text's tokens.
pub struct LmEncoder<'a> {
    pub params: &'a LmParams,
    pub vocab: &'a Vocabulary,
}

impl TokenEncoder for LmEncoder<'_> {
    fn encode(&self, text: &str) -> Array2<f64> {
        let mut ids = tokenize(self.vocab, text);
        ids.truncate(self.params.config.max_len);
        if ids.is_empty() {
            return Array2::zeros((0, self.params.config.d_model));
        }
        self.params
            .hidden_states(&ids)
            .expect("ids come from the model vocabulary and fit max_len")
    }
}

fn unit_rows(m: &Array2<f64>) -> Array2<f64> {
    let mut out = m.clone();
    for mut r in out.rows_mut() {
        let n = r.dot(&r).sqrt();
        if n > 0.0 {
            r /= n;
        }
    }
    out
}

/// Sentence embed_score (×100), max over references.
pub fn embed_score_sentence(prediction: &str, references: &[String], encoder: &dyn TokenEncoder) -> f64 {
    let p = unit_rows(&encoder.encode(prediction));
    if p.nrows() == 0 {
        return 0.0;
    }
    references
        .iter()
        .map(|r| {
            let r = unit_rows(&encoder.encode(r));
            if r.nrows() == 0 {
                return 0.0;
            }
            let sim = p.dot(&r.t());
            let prec = mean(
                sim.rows()
                    .into_iter()
                    .map(|row| row.fold(f64::NEG_INFINITY, |a, &b| a.max(b))),
            );
            let rec = mean(
                sim.columns()
                    .into_iter()
                    .map(|c| c.fold(f64::NEG_INFINITY, |a, &b| a.max(b))),
            );
            if prec + rec <= 0.0 {
                return 0.0;
            }
            (100.0 * 2.0 * prec * rec / (prec + rec)).clamp(0.0, 100.0)
        })
        .fold(0.0, f64::max)
}

pub fn embed_score<R: AsRef<[String]>>(
    predictions: &[String],
    references: &[R],
    encoder: &dyn TokenEncoder,
) -> Result<f64> {
    check_shapes(predictions.len(), references)?;
    Ok(mean(
        predictions
            .iter()
            .zip(references)
            .map(|(p, r)| embed_score_sentence(p, r.as_ref(), encoder)),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub bleu4: f64,
    pub meteor_simple: f64,
    pub rouge_l: f64,
    pub cider: f64,
    /// Absent when no encoder was supplied.
    pub embed_score: Option<f64>,
    pub count: usize,
}

/// All metrics over `predictions` aligned with `instances` (gold hypotheses
/// as references).
pub fn evaluate_corpus(
    predictions: &[String],
    instances: &[AbductiveInstance],
    encoder: Option<&dyn TokenEncoder>,
) -> Result<MetricsReport> {
    if predictions.len() != instances.len() {
        return Err(Error::Input(format!(
            "{} predictions for {} instances",
            predictions.len(),
            instances.len()
        )));
    }
    let refs: Vec<&[String]> = instances.iter().map(|i| i.gold_hyps.as_slice()).collect();
    Ok(MetricsReport {
        bleu4: bleu4(predictions, &refs)?,
        meteor_simple: meteor_simple(predictions, &refs)?,
        rouge_l: rouge_l(predictions, &refs)?,
        cider: cider(predictions, &refs)?,
        embed_score: encoder.map(|e| embed_score(predictions, &refs, e)).transpose()?,
        count: predictions.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn s(x: &str) -> String {
        x.to_string()
    }

    fn refs(xs: &[&str]) -> Vec<Vec<String>> {
        xs.iter().map(|x| vec![s(x)]).collect()
    }

    #[test]
    fn bleu_hand_count() {
        let v = bleu4(&[s("the cat sat on the mat")], &refs(&["the cat sat on a mat"])).unwrap();
        assert_abs_diff_eq!(v, 100.0 * (1.0f64 / 12.0).powf(0.25), epsilon = 1e-9);
    }

    #[test]
    fn bleu_identity_and_disjoint() {
        let r = ["a b c d e", "f g h i j k"];
        let preds: Vec<String> = r.iter().map(|x| s(x)).collect();
        assert_abs_diff_eq!(bleu4(&preds, &refs(&r)).unwrap(), 100.0, epsilon = 1e-9);
        let v = bleu4_with(&[s("p q r s t")], &refs(&["a b c d e"]), false).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(bleu4(&[s("")], &refs(&["a b"])).unwrap(), 0.0);
    }

    #[test]
    fn bleu_brevity_penalty_applies() {
        let v = bleu4(&[s("a b c d")], &refs(&["a b c d e f g h"])).unwrap();
        assert_abs_diff_eq!(v, 100.0 * (1.0f64 - 2.0).exp(), epsilon = 1e-9);
    }

    #[test]
    fn rouge_hand_lcs() {
        assert_abs_diff_eq!(rouge_l_sentence("a b c d", &[s("a c d e")]), 75.0, epsilon = 1e-12);
        assert_eq!(rouge_l_sentence("a b", &[s("c d")]), 0.0);
        assert_abs_diff_eq!(rouge_l_sentence("x y z", &[s("x y z")]), 100.0, epsilon = 1e-12);
    }

    #[test]
    fn meteor_alignment() {
        assert_abs_diff_eq!(
            meteor_simple_sentence("the cat sat", &[s("the sat cat")]),
            50.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            meteor_simple_sentence("a b c d", &[s("a b c d")]),
            meteor_simple_identity(4),
            epsilon = 1e-12
        );
        assert_eq!(meteor_simple_sentence("a b", &[s("c d")]), 0.0);
    }

    #[test]
    fn cider_self_similarity_and_disjoint() {
        let r = ["a b c d", "e f g h", "i j k l"];
        let preds: Vec<String> = r.iter().map(|x| s(x)).collect();
        let full = cider(&preds, &refs(&r)).unwrap();
        assert!(full > 0.0);
        let mut worse = preds.clone();
        worse[0] = s("x y z w");
        let v = cider(&worse, &refs(&r)).unwrap();
        assert_abs_diff_eq!(v, full * 2.0 / 3.0, epsilon = 1e-9);
    }

    // Frozen from pycocoevalcap's CiderScorer (n = 4, σ = 6).
    #[test]
    fn cider_micro_corpus_golden() {
        let preds = [
            s("a man walks a dog"),
            s("the cat sleeps on the mat"),
            s("kids play on the grass"),
        ];
        let refs = vec![
            vec![s("a man walks his dog in the park"), s("a person walks a dog")],
            vec![s("the cat sleeps on the warm mat")],
            vec![s("two kids play soccer on the grass"), s("children play ball outside")],
        ];
        assert_abs_diff_eq!(cider(&preds, &refs).unwrap(), 4.1763303999090216, epsilon = 1e-9);
        let single = cider(&preds[1..2], &refs[1..2]).unwrap();
        assert!(single.is_finite());
    }

    // Frozen from nltk's corpus_bleu.
    #[test]
    fn bleu_matches_reference_implementation() {
        let v = bleu4(&[s("the cat sat on the mat")], &refs(&["the cat sat on a mat"])).unwrap();
        assert_abs_diff_eq!(v, 53.7284965911771, epsilon = 1e-9);
    }

    #[test]
    fn normalisation_ignores_case_and_trailing_space() {
        let a = rouge_l_sentence("The Cat sat.  ", &[s("the cat sat.")]);
        assert_abs_diff_eq!(a, 100.0, epsilon = 1e-12);
        let b = bleu4(&[s("A B C D E ")], &refs(&["a b c d e"])).unwrap();
        assert_abs_diff_eq!(b, 100.0, epsilon = 1e-9);
    }

    struct Bag;

    impl TokenEncoder for Bag {
        fn encode(&self, text: &str) -> Array2<f64> {
            let w = tokens(text);
            Array2::from_shape_fn((w.len(), 3), |(i, j)| {
                (w[i].len() + j) as f64 + (w[i].as_bytes()[0] % 5) as f64
            })
        }
    }

    #[test]
    fn embed_score_identity_and_symmetry() {
        assert_abs_diff_eq!(
            embed_score_sentence("a bb ccc", &[s("a bb ccc")], &Bag),
            100.0,
            epsilon = 1e-9
        );
        let x = embed_score_sentence("a bb ccc", &[s("dd e ff")], &Bag);
        let y = embed_score_sentence("dd e ff", &[s("a bb ccc")], &Bag);
        assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        assert_eq!(embed_score_sentence("", &[s("a")], &Bag), 0.0);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        assert!(bleu4(&[s("a")], &refs(&["a", "b"])).is_err());
        let empty: Vec<Vec<String>> = vec![vec![]];
        assert!(rouge_l(&[s("a")], &empty).is_err());
    }
}
