//! Toy autoregressive transformer with token, soft and extra-embedding inputs.

mod checkpoint;
pub(crate) mod model;
mod params;
pub(crate) mod sequence;
mod vocab;

pub use checkpoint::{Checkpoint, FORMAT_VERSION as CHECKPOINT_FORMAT_VERSION};
pub use model::{log_softmax, softmax, Conditioning};
pub use params::{BlockParams, LmParams, ModelConfig, PARAMS_VERSION};
pub use sequence::{argmax, SoftSequence, SIMPLEX_INPUT_TOL};
pub use vocab::{relation_marker, Specials, TokenId, Vocabulary, MIN_VOCAB};
