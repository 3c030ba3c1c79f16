//! Decoding a list of instances and the predictions file format.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model_dir::TrainedModel;
use crate::data::{AbductiveInstance, Variant};
use crate::decoding::{decode, DecodeConfig, DecodeOutput};
use crate::error::{Error, Result};
use crate::knowledge::{KnowledgeBundle, KnowledgeProvider};
use crate::lm::LmParams;
use crate::training::Objective;

/// One line of `predictions.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub hypothesis: String,
    pub score: f64,
    pub strategy: String,
    /// `objective/strategy` label inside experiment runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<String>,
}

impl Prediction {
    pub fn to_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)? + "\n")
    }
}

/// Parses a predictions file. A trailing line that does not parse (an
/// interrupted write) is dropped; the second value is the byte length of
/// the valid prefix.
pub fn read_predictions(path: &Path) -> Result<(Vec<Prediction>, usize)> {
    let src = match fs::read_to_string(path) {
        Ok(s) => s,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok((Vec::new(), 0)),
        Err(e) => return Err(Error::io(path, e)),
    };
    let lines: Vec<&str> = src.split_inclusive('\n').collect();
    let mut out = Vec::new();
    let mut valid = 0;
    for (i, raw) in lines.iter().enumerate() {
        let complete = raw.ends_with('\n');
        match serde_json::from_str::<Prediction>(raw.trim_end_matches('\n')) {
            Ok(p) if complete => {
                out.push(p);
                valid += raw.len();
            }
            _ if i + 1 == lines.len() => break,
            _ => {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: i + 1,
                    msg: "malformed prediction record".into(),
                })
            }
        }
    }
    Ok((out, valid))
}

pub fn write_predictions(path: &Path, preds: &[Prediction]) -> Result<()> {
    let mut s = String::new();
    for p in preds {
        s.push_str(&p.to_line()?);
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Appends one record and flushes, so an interrupted run keeps every
/// finished prediction.
pub fn append_prediction(file: &mut fs::File, path: &Path, p: &Prediction) -> Result<()> {
    file.write_all(p.to_line()?.as_bytes())
        .and_then(|_| file.flush())
        .map_err(|e| Error::io(path, e))
}

/// Decodes instances with one trained model and configuration.
pub struct Decoder<'a> {
    model: &'a TrainedModel,
    provider: &'a dyn KnowledgeProvider,
    encoder: Option<LmParams>,
    cfg: DecodeConfig,
}

impl<'a> Decoder<'a> {
    pub fn new(model: &'a TrainedModel, provider: &'a dyn KnowledgeProvider, cfg: DecodeConfig) -> Result<Self> {
        cfg.validate()?;
        if cfg.strategy.is_supervised() && model.objective == Objective::ObservationLm {
            return Err(Error::Config(format!(
                "{} decoding needs a model trained on hypotheses, got an obs_lm model",
                cfg.strategy
            )));
        }
        let needs_knowledge =
            cfg.strategy.is_supervised() && model.objective.variant().is_some_and(|v| v.needs_knowledge());
        let encoder = needs_knowledge.then(|| model.knowledge_encoder()).transpose()?;
        Ok(Self {
            model,
            provider,
            encoder,
            cfg,
        })
    }

    pub fn config(&self) -> &DecodeConfig {
        &self.cfg
    }

    pub fn decode(&self, inst: &AbductiveInstance) -> Result<DecodeOutput> {
        let bundle = self
            .encoder
            .as_ref()
            .map(|enc| KnowledgeBundle::build(self.provider, &inst.obs1, &inst.obs2, enc, &self.model.vocab));
        let variant = self.model.objective.variant().unwrap_or(Variant::Base);
        decode(
            &self.model.params,
            &self.model.vocab,
            inst,
            &self.cfg,
            variant,
            bundle.as_ref(),
        )
    }

    pub fn prediction(&self, inst: &AbductiveInstance, out: &DecodeOutput, system: Option<String>) -> Prediction {
        Prediction {
            id: inst.id.clone(),
            hypothesis: out.text.clone(),
            score: out.score,
            strategy: self.cfg.strategy.name().to_string(),
            system,
        }
    }
}

/// File-name-safe form of an instance id.
pub fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect()
}
