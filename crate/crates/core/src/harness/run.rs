//! End-to-end experiment runs.
//!
//! Run directory layout:
//!
//! ```text
//! <run>/
//!   config.resolved          every setting, in defaults order
//!   data/{train,dev,test}.jsonl
//!   models/<objective>/      final.ckpt, loss.csv, training.json
//!   predictions.jsonl        all systems, in config order
//!   traces/<objective>-<strategy>/<id>.jsonl   unsupervised decoders only
//!   report.json, report.md
//!   failures.md
//!   manifest.json            version, seeds, timing
//! ```
//!
//! Everything except `manifest.json` is a function of `config.resolved`.
//! Rerunning into an existing directory with the same configuration
//! resumes: finished models are loaded and predictions already on disk are
//! kept.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use serde::Serialize;

use super::config::{ConfigMap, System};
use super::failures::{failure_report, SystemOutputs};
use super::model_dir::{is_complete, load_model_dir, train_model_dir, TrainedModel};
use super::predict::{append_prediction, file_stem, read_predictions, Decoder, Prediction};
use super::report::{Report, ReportRow};
use crate::data::{build_vocabulary, save_jsonl, AbductiveInstance};
use crate::decoding::{instance_seed, trace_to_jsonl, DecodeConfig};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_corpus, LmEncoder, TokenEncoder};
use crate::training::{knowledge_encoder, Objective, TrainConfig};

#[derive(Debug, Serialize)]
struct Seeds {
    data: Option<u64>,
    train: u64,
    knowledge_encoder: u64,
    decode: u64,
    /// Per-instance seeds of the stochastic decoders.
    instances: BTreeMap<String, u64>,
}

#[derive(Debug, Serialize)]
struct Manifest {
    code_version: String,
    systems: Vec<String>,
    instances: usize,
    seeds: Seeds,
    resumed_predictions: usize,
    timing_secs: BTreeMap<String, f64>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub report: Report,
    /// Predictions found on disk and reused.
    pub resumed: usize,
}

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn system_cfg(base: &DecodeConfig, s: &System) -> DecodeConfig {
    DecodeConfig {
        strategy: s.strategy,
        ..base.clone()
    }
}

/// Runs the experiment described by `map` into `dir`.
pub fn run_experiment(map: &ConfigMap, dir: &Path) -> Result<RunSummary> {
    let started = Instant::now();
    let exp = map.experiment()?;
    let train_base = map.train_config()?;
    let decode_base = map.decode_config()?;
    let resolved = map.to_resolved();

    let resolved_path = dir.join("config.resolved");
    match fs::read_to_string(&resolved_path) {
        Ok(existing) if existing != resolved => {
            return Err(Error::Config(format!(
                "{} was produced by a different configuration",
                dir.display()
            )))
        }
        Ok(_) => info!("resuming {}", dir.display()),
        Err(_) => write(&resolved_path, &resolved)?,
    }

    let corpus = map.corpus()?;
    for (name, split) in [("train", &corpus.train), ("dev", &corpus.dev), ("test", &corpus.test)] {
        let path = dir.join("data").join(format!("{name}.jsonl"));
        fs::create_dir_all(dir.join("data")).map_err(|e| Error::io(dir, e))?;
        save_jsonl(&path, split)?;
    }
    let rules = map.rules()?;
    let vocab = build_vocabulary(corpus.all(), &rules)?;
    let model_cfg = map.model_config(vocab.len())?;

    let mut timing = BTreeMap::new();
    let mut models: Vec<(Objective, TrainedModel)> = Vec::new();
    for s in &exp.systems {
        if models.iter().any(|(o, _)| *o == s.objective) {
            continue;
        }
        let mdir = dir.join("models").join(s.objective.name());
        let t = Instant::now();
        let model = if is_complete(&mdir) {
            load_model_dir(&mdir)?
        } else {
            let cfg = TrainConfig {
                objective: s.objective,
                ..train_base.clone()
            };
            info!("training {} model", s.objective);
            train_model_dir(&mdir, model_cfg, &cfg, &vocab, &corpus.train, &corpus.dev, &rules)?
        };
        timing.insert(format!("train.{}", s.objective), t.elapsed().as_secs_f64());
        models.push((s.objective, model));
    }

    let split = exp.split.select(&corpus);
    let eval: &[AbductiveInstance] = if exp.limit > 0 && exp.limit < split.len() {
        &split[..exp.limit]
    } else {
        split
    };

    let pred_path = dir.join("predictions.jsonl");
    let (done, valid_len) = read_predictions(&pred_path)?;
    let expected: Vec<(String, &str)> = exp
        .systems
        .iter()
        .flat_map(|s| eval.iter().map(move |inst| (s.label(), inst.id.as_str())))
        .collect();
    for (p, (label, id)) in done.iter().zip(&expected) {
        if p.system.as_deref() != Some(label.as_str()) || p.id != *id {
            return Err(Error::Input(format!(
                "{} does not match this run's instance order",
                pred_path.display()
            )));
        }
    }
    if done.len() > expected.len() {
        return Err(Error::Input(format!("{} has extra records", pred_path.display())));
    }
    let resumed = done.len();
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&pred_path)
        .map_err(|e| Error::io(&pred_path, e))?;
    file.set_len(valid_len as u64).map_err(|e| Error::io(&pred_path, e))?;

    let mut k = 0;
    for s in &exp.systems {
        let model = &models.iter().find(|(o, _)| *o == s.objective).expect("trained above").1;
        let decoder = Decoder::new(model, &rules, system_cfg(&decode_base, s))?;
        let t = Instant::now();
        for inst in eval {
            k += 1;
            if k <= resumed {
                continue;
            }
            let out = decoder.decode(inst)?;
            if !s.strategy.is_supervised() {
                let path = dir
                    .join("traces")
                    .join(s.slug())
                    .join(format!("{}.jsonl", file_stem(&inst.id)));
                write(&path, &trace_to_jsonl(&out.trace)?)?;
            }
            append_prediction(&mut file, &pred_path, &decoder.prediction(inst, &out, Some(s.label())))?;
        }
        timing.insert(format!("decode.{}", s.label()), t.elapsed().as_secs_f64());
        info!("decoded {} instances with {}", eval.len(), s);
    }
    drop(file);

    let (all, _) = read_predictions(&pred_path)?;
    let encoder_params = knowledge_encoder(model_cfg, train_base.seed)?;
    let lm_encoder = LmEncoder {
        params: &encoder_params,
        vocab: &vocab,
    };
    let encoder: Option<&dyn TokenEncoder> = exp.embed_score.then_some(&lm_encoder as &dyn TokenEncoder);
    let mut rows = Vec::new();
    let mut outputs = Vec::new();
    for (s, chunk) in exp.systems.iter().zip(all.chunks(eval.len().max(1))) {
        let hyps: Vec<String> = chunk.iter().map(|p| p.hypothesis.clone()).collect();
        rows.push(ReportRow {
            system: s.label(),
            objective: s.objective.name().to_string(),
            strategy: s.strategy.name().to_string(),
            metrics: evaluate_corpus(&hyps, eval, encoder)?,
        });
        outputs.push(SystemOutputs {
            label: s.label(),
            hypotheses: hyps,
        });
    }
    let report = Report::new(exp.split.name(), rows);
    write(&dir.join("report.json"), &report.to_json()?)?;
    write(&dir.join("report.md"), &report.to_markdown())?;
    if exp.failures > 0 {
        write(
            &dir.join("failures.md"),
            &failure_report(&outputs, eval, exp.failures, exp.failure_metric)?,
        )?;
    }

    timing.insert("total".into(), started.elapsed().as_secs_f64());
    let manifest = Manifest {
        code_version: format!("{} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION")),
        systems: exp.systems.iter().map(System::label).collect(),
        instances: eval.len(),
        seeds: Seeds {
            data: (map.get("data.source")? == "synth")
                .then(|| map.parse("data.seed"))
                .transpose()?,
            train: train_base.seed,
            knowledge_encoder: train_base.seed,
            decode: decode_base.seed,
            instances: eval
                .iter()
                .map(|inst| (inst.id.clone(), instance_seed(decode_base.seed, &inst.id)))
                .collect(),
        },
        resumed_predictions: resumed,
        timing_secs: timing,
    };
    write(
        &dir.join("manifest.json"),
        &(serde_json::to_string_pretty(&manifest)? + "\n"),
    )?;
    Ok(RunSummary {
        dir: dir.to_path_buf(),
        report,
        resumed,
    })
}

/// Decodes `instances` and returns predictions in input order; with
/// `trace_dir`, unsupervised traces go to `<trace_dir>/<id>.jsonl`.
pub fn decode_all(
    decoder: &Decoder,
    instances: &[AbductiveInstance],
    trace_dir: Option<&Path>,
) -> Result<Vec<Prediction>> {
    let mut out = Vec::with_capacity(instances.len());
    for inst in instances {
        let d = decoder.decode(inst)?;
        if let Some(td) = trace_dir {
            if !d.trace.is_empty() {
                write(
                    &td.join(format!("{}.jsonl", file_stem(&inst.id))),
                    &trace_to_jsonl(&d.trace)?,
                )?;
            }
        }
        out.push(decoder.prediction(inst, &d, None));
    }
    Ok(out)
}
