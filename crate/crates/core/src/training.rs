//! Supervised fine-tuning objectives and the training loop.
//!
//! The supervised loss is the negative log-likelihood of the hypothesis
//! tokens (and the closing `<eos>`) given the encoded context; context
//! positions are masked out. The knowledge-embedding variant prepends the 18
//! bundle vectors as extra input embeddings. An additional observation-only
//! language-model objective trains the model used by the unsupervised
//! decoders, which never sees a hypothesis.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::info;
use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::Graph;
use crate::data::{encode_instance, tokenize, AbductiveInstance, EncodedInstance, Variant};
use crate::error::{Error, Result};
use crate::knowledge::{KnowledgeBundle, KnowledgeProvider};
use crate::lm::model::bind;
use crate::lm::{Checkpoint, LmParams, ModelConfig, TokenId, Vocabulary};

/// What the model is trained to predict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Objective {
    /// Hypothesis given observations, under a conditioning variant.
    Supervised(Variant),
    /// Plain language modelling of `<bos> obs1 obs2 <eos>`; no hypotheses.
    ObservationLm,
}

impl Objective {
    pub fn name(self) -> &'static str {
        match self {
            Objective::Supervised(v) => v.name(),
            Objective::ObservationLm => "obs_lm",
        }
    }

    pub fn variant(self) -> Option<Variant> {
        match self {
            Objective::Supervised(v) => Some(v),
            Objective::ObservationLm => None,
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "obs_lm" => Ok(Objective::ObservationLm),
            other => other.parse().map(Objective::Supervised),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub objective: Objective,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub clip_norm: f64,
    pub seed: u64,
    /// Save a checkpoint every this many epochs (0 disables intermediate saves).
    pub checkpoint_every: usize,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return bad("clip norm must be positive");
        }
        Ok(())
    }
}

/// Gradients in the canonical tensor order of [`LmParams::tensors`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads(pub Vec<Array2<f64>>);

impl ParamGrads {
    pub fn zeros_like(params: &LmParams) -> Self {
        Self(params.tensors().iter().map(|t| Array2::zeros(t.raw_dim())).collect())
    }

    pub fn add_assign(&mut self, other: &ParamGrads) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += b;
        }
    }

    pub fn scale(&mut self, c: f64) {
        for a in &mut self.0 {
            *a *= c;
        }
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().flat_map(|a| a.iter()).map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// A token sequence with the index where scored positions begin.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub tokens: Vec<TokenId>,
    /// Tokens at or after this index contribute to the loss.
    pub target_start: usize,
    pub extras: Vec<Array1<f64>>,
}

impl TrainExample {
    pub fn from_encoded(enc: &EncodedInstance, knowledge: Option<&KnowledgeBundle>) -> Result<Self> {
        if enc.target.is_empty() {
            return Err(Error::Input("instance has no gold hypothesis".into()));
        }
        let extras = match enc.variant {
            Variant::KnowledgeEmb => knowledge
                .ok_or_else(|| Error::Config("knowledge_emb requires a knowledge bundle".into()))?
                .vectors(),
            _ => Vec::new(),
        };
        Ok(Self {
            tokens: enc.full(),
            target_start: enc.context.len(),
            extras,
        })
    }

    /// `<bos> obs1 obs2 <eos>`, scoring everything after `<bos>`.
    pub fn observation_lm(vocab: &Vocabulary, inst: &AbductiveInstance) -> Self {
        let s = vocab.specials();
        let mut tokens = vec![s.bos];
        tokens.extend(tokenize(vocab, &inst.obs1));
        tokens.extend(tokenize(vocab, &inst.obs2));
        tokens.push(s.eos);
        Self {
            tokens,
            target_start: 1,
            extras: Vec::new(),
        }
    }

    pub fn scored_tokens(&self) -> usize {
        self.tokens.len() - self.target_start
    }
}

/// Negative log-likelihood of the scored tokens; gradients when requested.
pub fn example_loss(params: &LmParams, ex: &TrainExample, want_grad: bool) -> Result<(f64, Option<ParamGrads>)> {
    if ex.target_start == 0 || ex.target_start >= ex.tokens.len() {
        return Err(Error::Input("example needs a nonempty context and target".into()));
    }
    params.check_ids(&ex.tokens)?;
    let n_extra = ex.extras.len();
    params.check_len(ex.tokens.len() + n_extra)?;
    let mut g = Graph::new();
    let b = bind(&mut g, params, want_grad);
    let fed = &ex.tokens[..ex.tokens.len() - 1];
    let mut x = b.embed_tokens(&mut g, fed);
    if n_extra > 0 {
        let d = params.config.d_model;
        let mut m = Array2::zeros((n_extra, d));
        for (i, e) in ex.extras.iter().enumerate() {
            if e.len() != d {
                return Err(Error::Input(format!("extra embedding {i} has dimension {}", e.len())));
            }
            m.row_mut(i).assign(e);
        }
        let ex_var = g.constant(m);
        x = g.concat_rows(&[ex_var, x]);
    }
    let pass = b.run(&mut g, x);
    let target = &ex.tokens[ex.target_start..];
    let lp = b.target_log_prob(&mut g, pass.logits, n_extra + ex.target_start - 1, target);
    let loss = g.scale(lp, -1.0);
    let value = g.scalar(loss);
    let grads = want_grad.then(|| {
        let mut grads = g.backward(loss);
        ParamGrads(
            b.leaves
                .iter()
                .zip(params.tensors())
                .map(|(&v, t)| grads.take_or_zeros(v, t.dim()))
                .collect(),
        )
    });
    Ok((value, grads))
}

/// Supervised loss −Σ log P(hypothesis tokens, `<eos>` | context[, knowledge])
/// and its parameter gradients.
pub fn nll_loss(
    params: &LmParams,
    encoded: &EncodedInstance,
    variant: Variant,
    knowledge: Option<&KnowledgeBundle>,
) -> Result<(f64, ParamGrads)> {
    if encoded.variant != variant {
        return Err(Error::Config(format!(
            "instance encoded as {} but loss requested for {variant}",
            encoded.variant
        )));
    }
    if variant.needs_knowledge() && knowledge.is_none() {
        return Err(Error::Config(format!("variant {variant} requires a knowledge bundle")));
    }
    let ex = TrainExample::from_encoded(encoded, knowledge)?;
    let (loss, grads) = example_loss(params, &ex, true)?;
    Ok((loss, grads.expect("gradients requested")))
}

/// Frozen parameters used to embed knowledge for a model initialised with
/// `config` and `seed`: the model's own initial weights.
pub fn knowledge_encoder(config: ModelConfig, seed: u64) -> Result<LmParams> {
    LmParams::init(config, seed)
}

/// Builds training examples for `instances` under `objective`.
pub fn build_examples(
    objective: Objective,
    instances: &[AbductiveInstance],
    vocab: &Vocabulary,
    provider: &dyn KnowledgeProvider,
    encoder: &LmParams,
) -> Result<Vec<TrainExample>> {
    let max_len = encoder.config.max_len;
    instances
        .iter()
        .map(|inst| match objective {
            Objective::ObservationLm => Ok(TrainExample::observation_lm(vocab, inst)),
            Objective::Supervised(variant) => {
                let bundle = variant
                    .needs_knowledge()
                    .then(|| KnowledgeBundle::build(provider, &inst.obs1, &inst.obs2, encoder, vocab));
                let enc = encode_instance(vocab, inst, variant, bundle.as_ref(), max_len)?;
                TrainExample::from_encoded(&enc, bundle.as_ref())
            }
        })
        .collect()
}

/// Mean per-token loss over `examples`.
pub fn mean_token_loss(params: &LmParams, examples: &[TrainExample]) -> Result<f64> {
    let mut total = 0.0;
    let mut tokens = 0;
    for ex in examples {
        total += example_loss(params, ex, false)?.0;
        tokens += ex.scored_tokens();
    }
    Ok(if tokens == 0 { 0.0 } else { total / tokens as f64 })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossPoint {
    pub epoch: usize,
    pub split: &'static str,
    /// Mean per-token negative log-likelihood (nats).
    pub loss: f64,
}

pub fn loss_curve_csv(curve: &[LossPoint]) -> String {
    let mut out = String::from("epoch,split,loss\n");
    for p in curve {
        out.push_str(&format!("{},{},{}\n", p.epoch, p.split, p.loss));
    }
    out
}

pub struct TrainOutcome {
    pub params: LmParams,
    /// Epoch 0 rows hold the losses of the initial model.
    pub curve: Vec<LossPoint>,
    pub checkpoints: Vec<PathBuf>,
}

pub struct TrainData<'a> {
    pub vocab: &'a Vocabulary,
    pub train: &'a [AbductiveInstance],
    pub dev: &'a [AbductiveInstance],
    pub provider: &'a dyn KnowledgeProvider,
}

/// Mini-batch SGD with momentum and global-norm clipping, teacher forcing
/// throughout. Deterministic given `cfg.seed`, which also seeds the model
/// initialisation. With `out_dir`, writes `loss.csv`, periodic
/// `epoch-NNN.ckpt` files and `final.ckpt`.
pub fn train(model: ModelConfig, cfg: &TrainConfig, data: TrainData, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::Input("training corpus is empty".into()));
    }
    let init = LmParams::init(model, cfg.seed)?;
    train_from(init, cfg, data, out_dir)
}

/// As [`train`], starting from given parameters.
pub fn train_from(
    mut params: LmParams,
    cfg: &TrainConfig,
    data: TrainData,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::Input("training corpus is empty".into()));
    }
    if data.vocab.len() != params.config.vocab_size {
        return Err(Error::Config("vocabulary size does not match model config".into()));
    }
    let encoder = knowledge_encoder(params.config, params.seed)?;
    let train_ex = build_examples(cfg.objective, data.train, data.vocab, data.provider, &encoder)?;
    let dev_ex = build_examples(cfg.objective, data.dev, data.vocab, data.provider, &encoder)?;

    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut curve = vec![LossPoint {
        epoch: 0,
        split: "train",
        loss: mean_token_loss(&params, &train_ex)?,
    }];
    if !dev_ex.is_empty() {
        curve.push(LossPoint {
            epoch: 0,
            split: "dev",
            loss: mean_token_loss(&params, &dev_ex)?,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_ex.len()).collect();
    let mut velocity = ParamGrads::zeros_like(&params);
    let mut checkpoints = Vec::new();
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_tokens = 0;
        for batch in order.chunks(cfg.batch_size) {
            let mut acc = ParamGrads::zeros_like(&params);
            for &i in batch {
                let (loss, grads) = example_loss(&params, &train_ex[i], true)?;
                if !loss.is_finite() {
                    return Err(Error::Divergence { epoch, step, loss });
                }
                epoch_loss += loss;
                epoch_tokens += train_ex[i].scored_tokens();
                acc.add_assign(&grads.expect("gradients requested"));
            }
            acc.scale(1.0 / batch.len() as f64);
            let norm = acc.norm();
            if !norm.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    step,
                    loss: norm,
                });
            }
            if norm > cfg.clip_norm {
                acc.scale(cfg.clip_norm / norm);
            }
            for ((v, g), p) in velocity.0.iter_mut().zip(&acc.0).zip(params.tensors_mut()) {
                *v *= cfg.momentum;
                *v += g;
                p.scaled_add(-cfg.learning_rate, v);
            }
            step += 1;
        }
        let train_loss = epoch_loss / epoch_tokens.max(1) as f64;
        curve.push(LossPoint {
            epoch,
            split: "train",
            loss: train_loss,
        });
        if !dev_ex.is_empty() {
            let dev_loss = mean_token_loss(&params, &dev_ex)?;
            if !dev_loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    step,
                    loss: dev_loss,
                });
            }
            curve.push(LossPoint {
                epoch,
                split: "dev",
                loss: dev_loss,
            });
            info!("epoch {epoch}: train {train_loss:.4} dev {dev_loss:.4}");
        } else {
            info!("epoch {epoch}: train {train_loss:.4}");
        }
        if let Some(dir) = out_dir {
            if cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 && epoch < cfg.epochs {
                let path = dir.join(format!("epoch-{epoch:03}.ckpt"));
                Checkpoint::new(params.clone(), Some(data.vocab.clone())).save(&path)?;
                checkpoints.push(path);
            }
        }
    }
    if let Some(dir) = out_dir {
        let path = dir.join("final.ckpt");
        Checkpoint::new(params.clone(), Some(data.vocab.clone())).save(&path)?;
        checkpoints.push(path);
        let csv = dir.join("loss.csv");
        fs::write(&csv, loss_curve_csv(&curve)).map_err(|e| Error::io(&csv, e))?;
    }
    Ok(TrainOutcome {
        params,
        curve,
        checkpoints,
    })
}
