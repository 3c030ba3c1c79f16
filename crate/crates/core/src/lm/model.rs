//! Forward passes of the toy transformer: token inputs, soft (mixture)
//! inputs, and prepended extra embeddings, all routed through one graph
//! builder so every entry point shares the same arithmetic.

use ndarray::{Array1, Array2, Axis};

use super::params::{LmParams, ModelConfig};
use super::sequence::{check_simplex_rows, SoftSequence, SIMPLEX_INPUT_TOL};
use super::vocab::TokenId;
use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};

pub(crate) struct BoundBlock {
    ln1_gain: Var,
    ln1_bias: Var,
    w_q: Var,
    b_q: Var,
    w_k: Var,
    b_k: Var,
    w_v: Var,
    b_v: Var,
    w_o: Var,
    b_o: Var,
    ln2_gain: Var,
    ln2_bias: Var,
    w_ff1: Var,
    b_ff1: Var,
    w_ff2: Var,
    b_ff2: Var,
}

/// Parameters placed on a graph as leaves.
pub(crate) struct Bound {
    pub config: ModelConfig,
    pub tok_emb: Var,
    pos_emb: Var,
    blocks: Vec<BoundBlock>,
    lnf_gain: Var,
    lnf_bias: Var,
    head_scale: Var,
    /// Leaves in canonical tensor order.
    pub leaves: Vec<Var>,
}

pub(crate) struct Pass {
    /// Residual stream after the last block (before the final layer norm).
    pub hidden: Var,
    pub logits: Var,
}

/// Places `params` on `g`; `trainable` decides whether the leaves collect
/// gradients.
pub(crate) fn bind<'a>(g: &mut Graph<'a>, params: &'a LmParams, trainable: bool) -> Bound {
    let leaves: Vec<Var> = params
        .tensors()
        .into_iter()
        .map(|t| if trainable { g.param_ref(t) } else { g.constant_ref(t) })
        .collect();
    let mut it = leaves.iter().copied();
    let mut next = || it.next().expect("tensor count matches layout");
    let tok_emb = next();
    let pos_emb = next();
    let blocks = (0..params.blocks.len())
        .map(|_| BoundBlock {
            ln1_gain: next(),
            ln1_bias: next(),
            w_q: next(),
            b_q: next(),
            w_k: next(),
            b_k: next(),
            w_v: next(),
            b_v: next(),
            w_o: next(),
            b_o: next(),
            ln2_gain: next(),
            ln2_bias: next(),
            w_ff1: next(),
            b_ff1: next(),
            w_ff2: next(),
            b_ff2: next(),
        })
        .collect();
    let lnf_gain = next();
    let lnf_bias = next();
    let head_scale = next();
    Bound {
        config: params.config,
        tok_emb,
        pos_emb,
        blocks,
        lnf_gain,
        lnf_bias,
        head_scale,
        leaves,
    }
}

impl Bound {
    pub fn embed_tokens(&self, g: &mut Graph, ids: &[TokenId]) -> Var {
        g.gather_rows(self.tok_emb, ids)
    }

    /// Expected embedding Σ_i p_t[i]·E[i]. When `cols` is given, `probs` has
    /// one column per listed token id.
    pub fn embed_mixture(&self, g: &mut Graph, probs: Var, cols: Option<&[TokenId]>) -> Var {
        match cols {
            Some(cols) => {
                let sub = g.gather_rows(self.tok_emb, cols);
                g.matmul(probs, sub)
            }
            None => g.matmul(probs, self.tok_emb),
        }
    }

    /// Runs the transformer over already-embedded inputs (T × d).
    pub fn run(&self, g: &mut Graph, x: Var) -> Pass {
        let len = g.value(x).nrows();
        let pos = g.slice_rows(self.pos_emb, 0, len);
        let mut h = g.add(x, pos);
        let n_heads = self.config.n_heads;
        let dh = self.config.head_dim();
        let inv_sqrt = 1.0 / (dh as f64).sqrt();
        for b in &self.blocks {
            let a = g.layer_norm(h, b.ln1_gain, b.ln1_bias);
            let q = g.matmul(a, b.w_q);
            let q = g.add_row(q, b.b_q);
            let k = g.matmul(a, b.w_k);
            let k = g.add_row(k, b.b_k);
            let v = g.matmul(a, b.w_v);
            let v = g.add_row(v, b.b_v);
            let heads: Vec<Var> = (0..n_heads)
                .map(|i| {
                    let (lo, hi) = (i * dh, (i + 1) * dh);
                    let (qh, kh, vh) = if n_heads == 1 {
                        (q, k, v)
                    } else {
                        (
                            g.slice_cols(q, lo, hi),
                            g.slice_cols(k, lo, hi),
                            g.slice_cols(v, lo, hi),
                        )
                    };
                    let scores = g.matmul_t(qh, kh);
                    let scores = g.scale(scores, inv_sqrt);
                    let attn = g.causal_softmax(scores);
                    g.matmul(attn, vh)
                })
                .collect();
            let o = g.concat_cols(&heads);
            let o = g.matmul(o, b.w_o);
            let o = g.add_row(o, b.b_o);
            h = g.add(h, o);
            let m = g.layer_norm(h, b.ln2_gain, b.ln2_bias);
            let f = g.matmul(m, b.w_ff1);
            let f = g.add_row(f, b.b_ff1);
            let f = g.gelu(f);
            let f = g.matmul(f, b.w_ff2);
            let f = g.add_row(f, b.b_ff2);
            h = g.add(h, f);
        }
        let z = g.layer_norm(h, self.lnf_gain, self.lnf_bias);
        let logits = g.matmul_t(z, self.tok_emb);
        let logits = g.scale_by(logits, self.head_scale);
        Pass { hidden: h, logits }
    }

    /// Σ_i log P(target_i) where row `first_row + i` of `logits` predicts
    /// `target[i]`. Returns a 1×1 node.
    pub fn target_log_prob(&self, g: &mut Graph, logits: Var, first_row: usize, target: &[TokenId]) -> Var {
        let rows = g.slice_rows(logits, first_row, first_row + target.len());
        let logp = g.log_softmax(rows);
        let picks: Vec<(usize, usize)> = target.iter().copied().enumerate().collect();
        g.pick_sum(logp, &picks)
    }
}

/// What a log-probability is conditioned on.
#[derive(Debug, Clone, Copy)]
pub enum Conditioning<'a> {
    Tokens(&'a [TokenId]),
    /// Hard tokens followed by soft positions.
    Soft {
        prefix: &'a [TokenId],
        soft: &'a SoftSequence,
    },
}

impl LmParams {
    pub(crate) fn check_ids(&self, ids: &[TokenId]) -> Result<()> {
        match ids.iter().find(|&&id| id >= self.config.vocab_size) {
            Some(id) => Err(Error::Input(format!(
                "token id {id} out of range for vocabulary of {}",
                self.config.vocab_size
            ))),
            None => Ok(()),
        }
    }

    pub(crate) fn check_len(&self, len: usize) -> Result<()> {
        if len > self.config.max_len {
            Err(Error::Length {
                len,
                max: self.config.max_len,
            })
        } else {
            Ok(())
        }
    }

    fn check_soft(&self, soft: &SoftSequence) -> Result<()> {
        if soft.vocab_size() != self.config.vocab_size {
            return Err(Error::Input(format!(
                "soft sequence has {} columns, vocabulary has {}",
                soft.vocab_size(),
                self.config.vocab_size
            )));
        }
        check_simplex_rows(soft.probs(), SIMPLEX_INPUT_TOL)
    }

    fn extras_matrix(&self, extra: &[Array1<f64>]) -> Result<Array2<f64>> {
        let d = self.config.d_model;
        let mut m = Array2::zeros((extra.len(), d));
        for (i, e) in extra.iter().enumerate() {
            if e.len() != d {
                return Err(Error::Input(format!(
                    "extra embedding {i} has dimension {}, expected {d}",
                    e.len()
                )));
            }
            m.row_mut(i).assign(e);
        }
        Ok(m)
    }

    /// Next-token logits for every position of `prefix` (|prefix| × V). Extra
    /// embeddings, when given, are prepended ahead of the tokens and take the
    /// first positional slots; their own output rows are not returned.
    pub fn forward_logits(&self, prefix: &[TokenId], extra: Option<&[Array1<f64>]>) -> Result<Array2<f64>> {
        if prefix.is_empty() {
            return Err(Error::Input("empty prefix".into()));
        }
        self.check_ids(prefix)?;
        let n_extra = extra.map_or(0, <[_]>::len);
        self.check_len(prefix.len() + n_extra)?;
        let mut g = Graph::new();
        let b = bind(&mut g, self, false);
        let tokens = b.embed_tokens(&mut g, prefix);
        let x = match extra {
            Some(e) if !e.is_empty() => {
                let ex = g.constant(self.extras_matrix(e)?);
                g.concat_rows(&[ex, tokens])
            }
            _ => tokens,
        };
        let pass = b.run(&mut g, x);
        Ok(g.value(pass.logits).slice(ndarray::s![n_extra.., ..]).to_owned())
    }

    /// Logits of the final position only.
    pub fn next_logits(&self, prefix: &[TokenId], extra: Option<&[Array1<f64>]>) -> Result<Array1<f64>> {
        let logits = self.forward_logits(prefix, extra)?;
        Ok(logits.row(logits.nrows() - 1).to_owned())
    }

    /// Residual-stream states after the last block (|tokens| × d).
    pub fn hidden_states(&self, tokens: &[TokenId]) -> Result<Array2<f64>> {
        if tokens.is_empty() {
            return Err(Error::Input("empty token sequence".into()));
        }
        self.check_ids(tokens)?;
        self.check_len(tokens.len())?;
        let mut g = Graph::new();
        let b = bind(&mut g, self, false);
        let x = b.embed_tokens(&mut g, tokens);
        let pass = b.run(&mut g, x);
        Ok(g.value(pass.hidden).clone())
    }

    /// Logits for `hard_prefix ++ soft` where each soft position is embedded
    /// as its probability-weighted mixture of token embeddings.
    pub fn forward_soft(&self, soft: &SoftSequence, hard_prefix: Option<&[TokenId]>) -> Result<Array2<f64>> {
        Ok(self.soft_vjp(soft, hard_prefix, None)?.0)
    }

    /// Like [`Self::forward_soft`], additionally returning the gradient of
    /// Σ cotangent ∘ logits with respect to the soft probabilities.
    pub fn soft_vjp(
        &self,
        soft: &SoftSequence,
        hard_prefix: Option<&[TokenId]>,
        cotangent: Option<&Array2<f64>>,
    ) -> Result<(Array2<f64>, Option<Array2<f64>>)> {
        self.check_soft(soft)?;
        let hard = hard_prefix.unwrap_or(&[]);
        self.check_ids(hard)?;
        let total = hard.len() + soft.len();
        if total == 0 {
            return Err(Error::Input("empty input".into()));
        }
        self.check_len(total)?;
        let mut g = Graph::new();
        let b = bind(&mut g, self, false);
        let p = g.param(soft.probs().clone());
        let mixed = b.embed_mixture(&mut g, p, None);
        let x = if hard.is_empty() {
            mixed
        } else {
            let h = b.embed_tokens(&mut g, hard);
            g.concat_rows(&[h, mixed])
        };
        let pass = b.run(&mut g, x);
        let logits = g.value(pass.logits).clone();
        let grad = match cotangent {
            Some(c) => {
                if c.dim() != logits.dim() {
                    return Err(Error::Input(format!(
                        "cotangent shape {:?} does not match logits {:?}",
                        c.dim(),
                        logits.dim()
                    )));
                }
                let w = g.constant(c.clone());
                let prod = g.mul(pass.logits, w);
                let s = g.sum(prod);
                let mut grads = g.backward(s);
                Some(grads.take_or_zeros(p, soft.probs().dim()))
            }
            None => None,
        };
        Ok((logits, grad))
    }

    /// Σ_t log P(target_t | conditioning, target_<t), in nats.
    pub fn log_prob(&self, target: &[TokenId], conditioning: Conditioning) -> Result<f64> {
        Ok(self.log_prob_impl(target, conditioning, false)?.0)
    }

    /// Log-probability together with its gradient with respect to the soft
    /// part of the conditioning (None for token conditioning).
    pub fn log_prob_with_grad(
        &self,
        target: &[TokenId],
        conditioning: Conditioning,
    ) -> Result<(f64, Option<Array2<f64>>)> {
        self.log_prob_impl(target, conditioning, true)
    }

    fn log_prob_impl(
        &self,
        target: &[TokenId],
        conditioning: Conditioning,
        want_grad: bool,
    ) -> Result<(f64, Option<Array2<f64>>)> {
        if target.is_empty() {
            return Err(Error::Input("empty target".into()));
        }
        self.check_ids(target)?;
        let mut g = Graph::new();
        let b = bind(&mut g, self, false);
        let (cond, soft_var, cond_len) = match conditioning {
            Conditioning::Tokens(ids) => {
                if ids.is_empty() {
                    return Err(Error::Input("empty conditioning".into()));
                }
                self.check_ids(ids)?;
                (b.embed_tokens(&mut g, ids), None, ids.len())
            }
            Conditioning::Soft { prefix, soft } => {
                self.check_soft(soft)?;
                self.check_ids(prefix)?;
                if prefix.is_empty() && soft.is_empty() {
                    return Err(Error::Input("empty conditioning".into()));
                }
                let p = g.param(soft.probs().clone());
                let mixed = b.embed_mixture(&mut g, p, None);
                let x = if prefix.is_empty() {
                    mixed
                } else {
                    let h = b.embed_tokens(&mut g, prefix);
                    g.concat_rows(&[h, mixed])
                };
                (x, Some(p), prefix.len() + soft.len())
            }
        };
        self.check_len(cond_len + target.len())?;
        // the final target token is never fed back in
        let fed = b.embed_tokens(&mut g, &target[..target.len() - 1]);
        let x = if target.len() > 1 {
            g.concat_rows(&[cond, fed])
        } else {
            cond
        };
        let pass = b.run(&mut g, x);
        let lp = b.target_log_prob(&mut g, pass.logits, cond_len - 1, target);
        let value = g.scalar(lp);
        let grad = match (want_grad, soft_var) {
            (true, Some(p)) => {
                let shape = g.value(p).dim();
                Some(g.backward(lp).take_or_zeros(p, shape))
            }
            _ => None,
        };
        Ok((value, grad))
    }
}

/// Softmax of one logit row.
pub fn softmax(logits: &Array1<f64>) -> Array1<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e = logits.mapv(|x| (x - max).exp());
    let total = e.sum();
    e / total
}

/// Log-softmax of one logit row.
pub fn log_softmax(logits: &Array1<f64>) -> Array1<f64> {
    let row = logits.view().insert_axis(Axis(0));
    crate::autograd::log_softmax_rows(row).remove_axis(Axis(0))
}
