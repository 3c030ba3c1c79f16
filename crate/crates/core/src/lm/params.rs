use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::vocab::MIN_VOCAB;
use crate::error::{Error, Result};

/// Parameter layout version written into checkpoints.
pub const PARAMS_VERSION: u32 = 1;

const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_len: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("vocab_size", self.vocab_size),
            ("d_model", self.d_model),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
            ("max_len", self.max_len),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("model dimension {name} must be positive")));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.vocab_size < MIN_VOCAB {
            return Err(Error::Config(format!(
                "vocab_size {} below minimum {MIN_VOCAB}",
                self.vocab_size
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub ln1_gain: Array2<f64>,
    pub ln1_bias: Array2<f64>,
    pub w_q: Array2<f64>,
    pub b_q: Array2<f64>,
    pub w_k: Array2<f64>,
    pub b_k: Array2<f64>,
    pub w_v: Array2<f64>,
    pub b_v: Array2<f64>,
    pub w_o: Array2<f64>,
    pub b_o: Array2<f64>,
    pub ln2_gain: Array2<f64>,
    pub ln2_bias: Array2<f64>,
    pub w_ff1: Array2<f64>,
    pub b_ff1: Array2<f64>,
    pub w_ff2: Array2<f64>,
    pub b_ff2: Array2<f64>,
}

const BLOCK_FIELDS: [&str; 16] = [
    "ln1.gain", "ln1.bias", "attn.w_q", "attn.b_q", "attn.w_k", "attn.b_k", "attn.w_v", "attn.b_v", "attn.w_o",
    "attn.b_o", "ln2.gain", "ln2.bias", "ff.w1", "ff.b1", "ff.w2", "ff.b2",
];

impl BlockParams {
    fn tensors(&self) -> [&Array2<f64>; 16] {
        [
            &self.ln1_gain,
            &self.ln1_bias,
            &self.w_q,
            &self.b_q,
            &self.w_k,
            &self.b_k,
            &self.w_v,
            &self.b_v,
            &self.w_o,
            &self.b_o,
            &self.ln2_gain,
            &self.ln2_bias,
            &self.w_ff1,
            &self.b_ff1,
            &self.w_ff2,
            &self.b_ff2,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Array2<f64>; 16] {
        [
            &mut self.ln1_gain,
            &mut self.ln1_bias,
            &mut self.w_q,
            &mut self.b_q,
            &mut self.w_k,
            &mut self.b_k,
            &mut self.w_v,
            &mut self.b_v,
            &mut self.w_o,
            &mut self.b_o,
            &mut self.ln2_gain,
            &mut self.ln2_bias,
            &mut self.w_ff1,
            &mut self.b_ff1,
            &mut self.w_ff2,
            &mut self.b_ff2,
        ]
    }
}

/// Weights of the toy decoder-only transformer.
///
/// The output projection is tied to `tok_emb` and multiplied by the scalar
/// `head_scale`, which starts at zero so a fresh model predicts the uniform
/// distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct LmParams {
    pub config: ModelConfig,
    pub seed: u64,
    pub version: u32,
    pub tok_emb: Array2<f64>,
    pub pos_emb: Array2<f64>,
    pub blocks: Vec<BlockParams>,
    pub lnf_gain: Array2<f64>,
    pub lnf_bias: Array2<f64>,
    pub head_scale: Array2<f64>,
}

impl LmParams {
    /// Weights ~ Normal(0, 0.02); biases, layer-norm offsets and the output
    /// scale are zero; layer-norm gains are one.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let mut draw = |r: usize, c: usize| Array2::from_shape_simple_fn((r, c), || normal.sample(&mut rng));
        let (v, d, f) = (config.vocab_size, config.d_model, config.d_ff);
        let tok_emb = draw(v, d);
        let pos_emb = draw(config.max_len, d);
        let blocks = (0..config.n_layers)
            .map(|_| BlockParams {
                ln1_gain: Array2::ones((1, d)),
                ln1_bias: Array2::zeros((1, d)),
                w_q: draw(d, d),
                b_q: Array2::zeros((1, d)),
                w_k: draw(d, d),
                b_k: Array2::zeros((1, d)),
                w_v: draw(d, d),
                b_v: Array2::zeros((1, d)),
                w_o: draw(d, d),
                b_o: Array2::zeros((1, d)),
                ln2_gain: Array2::ones((1, d)),
                ln2_bias: Array2::zeros((1, d)),
                w_ff1: draw(d, f),
                b_ff1: Array2::zeros((1, f)),
                w_ff2: draw(f, d),
                b_ff2: Array2::zeros((1, d)),
            })
            .collect();
        Ok(Self {
            config,
            seed,
            version: PARAMS_VERSION,
            tok_emb,
            pos_emb,
            blocks,
            lnf_gain: Array2::ones((1, d)),
            lnf_bias: Array2::zeros((1, d)),
            head_scale: Array2::zeros((1, 1)),
        })
    }

    /// Tensor names in canonical order.
    pub fn tensor_names(&self) -> Vec<String> {
        let mut names = vec!["tok_emb".to_string(), "pos_emb".to_string()];
        for i in 0..self.blocks.len() {
            names.extend(BLOCK_FIELDS.iter().map(|f| format!("blocks.{i}.{f}")));
        }
        names.extend(["ln_f.gain", "ln_f.bias", "head.scale"].map(String::from));
        names
    }

    /// Tensors in canonical order (matches [`Self::tensor_names`]).
    pub fn tensors(&self) -> Vec<&Array2<f64>> {
        let mut out = vec![&self.tok_emb, &self.pos_emb];
        for b in &self.blocks {
            out.extend(b.tensors());
        }
        out.extend([&self.lnf_gain, &self.lnf_bias, &self.head_scale]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out = vec![&mut self.tok_emb, &mut self.pos_emb];
        for b in &mut self.blocks {
            out.extend(b.tensors_mut());
        }
        out.extend([&mut self.lnf_gain, &mut self.lnf_bias, &mut self.head_scale]);
        out
    }

    /// Shapes implied by the config, in canonical order.
    pub fn expected_shapes(config: &ModelConfig) -> Vec<(usize, usize)> {
        let (v, d, f) = (config.vocab_size, config.d_model, config.d_ff);
        let block = [
            (1, d),
            (1, d),
            (d, d),
            (1, d),
            (d, d),
            (1, d),
            (d, d),
            (1, d),
            (d, d),
            (1, d),
            (1, d),
            (1, d),
            (d, f),
            (1, f),
            (f, d),
            (1, d),
        ];
        let mut shapes = vec![(v, d), (config.max_len, d)];
        for _ in 0..config.n_layers {
            shapes.extend(block);
        }
        shapes.extend([(1, d), (1, d), (1, 1)]);
        shapes
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Checks shape consistency and finiteness.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if self.blocks.len() != self.config.n_layers {
            return Err(Error::Config("block count does not match n_layers".into()));
        }
        let names = self.tensor_names();
        for ((name, t), want) in names
            .iter()
            .zip(self.tensors())
            .zip(Self::expected_shapes(&self.config))
        {
            if t.dim() != want {
                return Err(Error::Config(format!(
                    "{name} has shape {:?}, expected {want:?}",
                    t.dim()
                )));
            }
            if t.iter().any(|x| !x.is_finite()) {
                return Err(Error::Config(format!("{name} contains non-finite values")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn toy_config() -> ModelConfig {
        ModelConfig {
            vocab_size: 64,
            d_model: 32,
            n_layers: 2,
            n_heads: 2,
            d_ff: 64,
            max_len: 128,
        }
    }

    #[test]
    fn init_shapes_follow_config() {
        let p = LmParams::init(toy_config(), 7).unwrap();
        assert_eq!(p.tok_emb.dim(), (64, 32));
        assert_eq!(p.tensors().len(), p.tensor_names().len());
        p.validate().unwrap();
        assert!(p.head_scale.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = LmParams::init(toy_config(), 7).unwrap();
        let b = LmParams::init(toy_config(), 7).unwrap();
        let c = LmParams::init(toy_config(), 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.tok_emb, c.tok_emb);
    }

    #[test]
    fn degenerate_dims_are_rejected() {
        let mut cfg = toy_config();
        cfg.d_model = 0;
        assert!(matches!(LmParams::init(cfg, 1), Err(Error::Config(_))));
        let mut cfg = toy_config();
        cfg.n_heads = 3;
        assert!(LmParams::init(cfg, 1).is_err());
    }
}
