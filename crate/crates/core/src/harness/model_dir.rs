//! Trained-model directories: `final.ckpt` (parameters and vocabulary),
//! `loss.csv`, optional `epoch-NNN.ckpt` files and `training.json`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::AbductiveInstance;
use crate::error::{Error, Result};
use crate::knowledge::KnowledgeProvider;
use crate::lm::{Checkpoint, LmParams, ModelConfig, Vocabulary};
use crate::training::{knowledge_encoder, train, Objective, TrainConfig, TrainData};

/// Settings a model directory was trained with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub objective: String,
    pub model: ModelConfig,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub clip_norm: f64,
    pub seed: u64,
    pub train_instances: usize,
    pub dev_instances: usize,
}

/// A loaded model directory.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub params: LmParams,
    pub vocab: Vocabulary,
    pub objective: Objective,
}

impl TrainedModel {
    /// Frozen encoder for knowledge embeddings, as used during training.
    pub fn knowledge_encoder(&self) -> Result<LmParams> {
        knowledge_encoder(self.params.config, self.params.seed)
    }
}

/// Trains into `dir` and writes `training.json` last, so its presence marks
/// a complete directory.
pub fn train_model_dir(
    dir: &Path,
    model: ModelConfig,
    cfg: &TrainConfig,
    vocab: &Vocabulary,
    train_set: &[AbductiveInstance],
    dev_set: &[AbductiveInstance],
    provider: &dyn KnowledgeProvider,
) -> Result<TrainedModel> {
    let out = train(
        model,
        cfg,
        TrainData {
            vocab,
            train: train_set,
            dev: dev_set,
            provider,
        },
        Some(dir),
    )?;
    let record = TrainingRecord {
        objective: cfg.objective.name().to_string(),
        model,
        learning_rate: cfg.learning_rate,
        momentum: cfg.momentum,
        batch_size: cfg.batch_size,
        epochs: cfg.epochs,
        clip_norm: cfg.clip_norm,
        seed: cfg.seed,
        train_instances: train_set.len(),
        dev_instances: dev_set.len(),
    };
    let path = dir.join("training.json");
    fs::write(&path, serde_json::to_string_pretty(&record)? + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(TrainedModel {
        params: out.params,
        vocab: vocab.clone(),
        objective: cfg.objective,
    })
}

/// Whether `dir` holds a finished training run.
pub fn is_complete(dir: &Path) -> bool {
    dir.join("training.json").is_file() && dir.join("final.ckpt").is_file()
}

pub fn load_model_dir(dir: &Path) -> Result<TrainedModel> {
    let path = dir.join("training.json");
    let src = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let record: TrainingRecord = serde_json::from_str(&src)?;
    let ckpt = Checkpoint::load(dir.join("final.ckpt"))?;
    let vocab = ckpt
        .vocab
        .ok_or_else(|| Error::Checkpoint(format!("{}: checkpoint carries no vocabulary", dir.display())))?;
    if ckpt.params.config != record.model {
        return Err(Error::Checkpoint(format!(
            "{}: checkpoint config differs from training.json",
            dir.display()
        )));
    }
    Ok(TrainedModel {
        params: ckpt.params,
        vocab,
        objective: record.objective.parse()?,
    })
}
