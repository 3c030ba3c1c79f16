//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! | bytes | content |
//! |-------|---------|
//! | 8     | magic `INFILLCK` |
//! | 4     | container format version (u32) |
//! | 8     | header length `H` (u64) |
//! | H     | UTF-8 JSON header |
//! | ...   | tensor payload: f64 little-endian, row-major, in header order |
//!
//! The header records the parameter layout version, the model config, the
//! init seed, optional vocabulary, and for each tensor its name, dtype and
//! shape. Loading validates names and shapes against the config.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::params::{LmParams, ModelConfig, PARAMS_VERSION};
use super::vocab::Vocabulary;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"INFILLCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    dtype: String,
    shape: [usize; 2],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    params_version: u32,
    seed: u64,
    config: ModelConfig,
    vocab: Option<Vec<String>>,
    tensors: Vec<TensorMeta>,
}

/// Parameters plus the vocabulary they were trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: LmParams,
    pub vocab: Option<Vocabulary>,
}

impl Checkpoint {
    pub fn new(params: LmParams, vocab: Option<Vocabulary>) -> Self {
        Self { params, vocab }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let p = &self.params;
        let header = Header {
            params_version: p.version,
            seed: p.seed,
            config: p.config,
            vocab: self.vocab.as_ref().map(|v| v.tokens().to_vec()),
            tensors: p
                .tensor_names()
                .into_iter()
                .zip(p.tensors())
                .map(|(name, t)| TensorMeta {
                    name,
                    dtype: "f64".into(),
                    shape: [t.nrows(), t.ncols()],
                })
                .collect(),
        };
        let header = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(20 + header.len() + 8 * p.num_parameters());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for t in p.tensors() {
            for x in t.iter() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("missing magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported container version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(20..20 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body)?;
        if header.params_version != PARAMS_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported parameter layout version {}",
                header.params_version
            )));
        }
        let mut params = LmParams::init(header.config, header.seed)?;
        let names = params.tensor_names();
        if names.len() != header.tensors.len() {
            return Err(bad("tensor count does not match config"));
        }
        let mut offset = 20 + hlen;
        for ((meta, name), slot) in header.tensors.iter().zip(&names).zip(params.tensors_mut()) {
            if &meta.name != name || meta.dtype != "f64" {
                return Err(Error::Checkpoint(format!(
                    "unexpected tensor {} ({})",
                    meta.name, meta.dtype
                )));
            }
            if [slot.nrows(), slot.ncols()] != meta.shape {
                return Err(Error::Checkpoint(format!("tensor {} has wrong shape", meta.name)));
            }
            let n = meta.shape[0] * meta.shape[1];
            let raw = bytes
                .get(offset..offset + 8 * n)
                .ok_or_else(|| bad("truncated payload"))?;
            let values: Vec<f64> = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            *slot = Array2::from_shape_vec((meta.shape[0], meta.shape[1]), values)
                .map_err(|e| Error::Checkpoint(e.to_string()))?;
            offset += 8 * n;
        }
        if offset != bytes.len() {
            return Err(bad("trailing bytes after payload"));
        }
        params.validate()?;
        let vocab = header.vocab.map(Vocabulary::from_tokens).transpose()?;
        if let Some(v) = &vocab {
            if v.len() != params.config.vocab_size {
                return Err(bad("vocabulary size does not match config"));
            }
        }
        Ok(Self { params, vocab })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> LmParams {
        let cfg = ModelConfig {
            vocab_size: 20,
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            d_ff: 16,
            max_len: 12,
        };
        let mut p = LmParams::init(cfg, 5).unwrap();
        p.head_scale[[0, 0]] = 0.1 + f64::EPSILON;
        p
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let vocab = Vocabulary::build(["a", "b", "c"]).unwrap();
        let ck = Checkpoint::new(params(), Some(vocab));
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        for (a, b) in back.params.tensors().iter().zip(ck.params.tensors()) {
            assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = Checkpoint::new(params(), None).to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(Checkpoint::from_bytes(&wrong).is_err());
        let mut longer = bytes;
        longer.push(0);
        assert!(Checkpoint::from_bytes(&longer).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let ck = Checkpoint::new(params(), None);
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);
    }
}
