use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use infill::data::{build_vocabulary, load_jsonl, save_jsonl, synth_corpus, AbductiveInstance, WorldConfig};
use infill::decoding::Strategy;
use infill::harness::{
    decode_all, failure_report, load_model_dir, merge_reports, oracle_audit, read_predictions, run_experiment,
    train_model_dir, write_predictions, AuditConfig, ConfigMap, Decoder, Prediction, Report, ReportRow, SentenceMetric,
    SystemOutputs,
};
use infill::metrics::{evaluate_corpus, LmEncoder, TokenEncoder};
use infill::training::Objective;

/// Abductive text infilling toolkit.
#[derive(Parser)]
#[command(name = "infill", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Settings shared by the commands that read the experiment config.
#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// Config file layered over the shipped defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one setting, e.g. `--set decode.cold_iters=50`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ConfigMap> {
        let mut map = match &self.config {
            Some(p) => ConfigMap::from_file(p)?,
            None => ConfigMap::defaults(),
        };
        for o in &self.overrides {
            map.set_assignment(o)?;
        }
        Ok(map)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus as train/dev/test JSONL files.
    Synth {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Number of training instances; dev and test get a sixth each.
        #[arg(long, default_value_t = 300)]
        size: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a directory holding train.jsonl and dev.jsonl.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// base | knowledge_text | knowledge_emb | obs_lm (default: train.objective).
        #[arg(long, alias = "variant")]
        objective: Option<Objective>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Decode a JSONL file with a trained model directory.
    Decode {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// greedy | beam | top_p | delorean | cold (default: decode.strategy).
        #[arg(long)]
        strategy: Option<Strategy>,
        #[arg(long)]
        seed: Option<u64>,
        /// Decode only the first N instances.
        #[arg(long)]
        limit: Option<usize>,
        /// Write per-instance traces of the iterative decoders here.
        #[arg(long)]
        traces: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Score predictions against the gold hypotheses.
    Eval {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Directory for report.json and report.md.
        #[arg(long)]
        out: PathBuf,
        /// Model directory whose initial weights encode tokens for embed_score.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Merge the reports of several runs into one table.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump the lowest-scoring instances for manual analysis.
    Failures {
        #[arg(long)]
        data: PathBuf,
        /// Predictions files; the first system listed ranks the cases.
        #[arg(long, required = true)]
        predictions: Vec<PathBuf>,
        #[arg(long, default_value_t = 5)]
        n: usize,
        /// bleu4 | rouge_l | meteor_simple
        #[arg(long, default_value = "rouge_l")]
        metric: SentenceMetric,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare the unsupervised decoders with exhaustive search on tiny problems.
    OracleCheck {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 50)]
        instances: usize,
        #[arg(long, default_value_t = 12)]
        subset_size: usize,
        #[arg(long, default_value_t = 3)]
        len: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Write per-instance results as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train, decode, evaluate and report as one experiment.
    Run {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn load_split(dir: &Path, name: &str) -> Result<Vec<AbductiveInstance>> {
    let path = dir.join(format!("{name}.jsonl"));
    if !path.exists() {
        return Ok(Vec::new());
    }
    Ok(load_jsonl(&path)?)
}

/// Prediction groups keyed by system label (or strategy), in first-seen order.
fn group_predictions(preds: Vec<Prediction>) -> Vec<(String, Vec<Prediction>)> {
    let mut groups: Vec<(String, Vec<Prediction>)> = Vec::new();
    for p in preds {
        let key = p.system.clone().unwrap_or_else(|| p.strategy.clone());
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, g)) => g.push(p),
            None => groups.push((key, vec![p])),
        }
    }
    groups
}

/// Instances of `data` with their hypotheses from `preds`, in data order.
fn align(
    preds: &[Prediction],
    data: &[AbductiveInstance],
    label: &str,
) -> Result<(Vec<AbductiveInstance>, Vec<String>)> {
    let by_id: HashMap<&str, &str> = preds.iter().map(|p| (p.id.as_str(), p.hypothesis.as_str())).collect();
    if by_id.len() != preds.len() {
        bail!("{label}: duplicate prediction ids");
    }
    let known: HashMap<&str, ()> = data.iter().map(|i| (i.id.as_str(), ())).collect();
    if let Some(p) = preds.iter().find(|p| !known.contains_key(p.id.as_str())) {
        bail!("{label}: prediction for unknown instance {:?}", p.id);
    }
    let mut insts = Vec::new();
    let mut hyps = Vec::new();
    for inst in data {
        if let Some(h) = by_id.get(inst.id.as_str()) {
            insts.push(inst.clone());
            hyps.push(h.to_string());
        }
    }
    Ok((insts, hyps))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { seed, size, out } => {
            let corpus = synth_corpus(seed, size, WorldConfig::proportional(size))?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            for (name, split) in [("train", &corpus.train), ("dev", &corpus.dev), ("test", &corpus.test)] {
                save_jsonl(out.join(format!("{name}.jsonl")), split)?;
            }
            println!(
                "wrote {} train, {} dev, {} test instances to {}",
                corpus.train.len(),
                corpus.dev.len(),
                corpus.test.len(),
                out.display()
            );
        }
        Command::Train {
            data,
            out,
            objective,
            cfg,
        } => {
            let map = cfg.load()?;
            let mut tc = map.train_config()?;
            if let Some(o) = objective {
                tc.objective = o;
            }
            let (train, dev, test) = (
                load_split(&data, "train")?,
                load_split(&data, "dev")?,
                load_split(&data, "test")?,
            );
            if train.is_empty() {
                bail!("{} has no training instances", data.display());
            }
            let rules = map.rules()?;
            let vocab = build_vocabulary(train.iter().chain(&dev).chain(&test), &rules)?;
            let model = map.model_config(vocab.len())?;
            train_model_dir(&out, model, &tc, &vocab, &train, &dev, &rules)?;
            println!("trained {} model into {}", tc.objective, out.display());
        }
        Command::Decode {
            model,
            data,
            out,
            strategy,
            seed,
            limit,
            traces,
            cfg,
        } => {
            let map = cfg.load()?;
            let mut dc = map.decode_config()?;
            if let Some(s) = strategy {
                dc.strategy = s;
            }
            if let Some(s) = seed {
                dc.seed = s;
            }
            let trained = load_model_dir(&model)?;
            let rules = map.rules()?;
            let decoder = Decoder::new(&trained, &rules, dc)?;
            let mut instances = load_jsonl(&data)?;
            if let Some(n) = limit {
                instances.truncate(n);
            }
            let preds = decode_all(&decoder, &instances, traces.as_deref())?;
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            write_predictions(&out, &preds)?;
            println!("wrote {} predictions to {}", preds.len(), out.display());
        }
        Command::Eval {
            predictions,
            data,
            out,
            model,
        } => {
            let instances = load_jsonl(&data)?;
            let (preds, _) = read_predictions(&predictions)?;
            if preds.is_empty() {
                bail!("{} holds no predictions", predictions.display());
            }
            let trained = model.as_deref().map(load_model_dir).transpose()?;
            let enc_params = trained.as_ref().map(|t| t.knowledge_encoder()).transpose()?;
            let lm_encoder = trained.as_ref().zip(enc_params.as_ref()).map(|(t, p)| LmEncoder {
                params: p,
                vocab: &t.vocab,
            });
            let encoder = lm_encoder.as_ref().map(|e| e as &dyn TokenEncoder);
            let mut rows = Vec::new();
            for (label, group) in group_predictions(preds) {
                let (insts, hyps) = align(&group, &instances, &label)?;
                let (objective, strategy) = match label.split_once('/') {
                    Some((o, s)) => (o.to_string(), s.to_string()),
                    None => (String::new(), group[0].strategy.clone()),
                };
                rows.push(ReportRow {
                    system: label,
                    objective,
                    strategy,
                    metrics: evaluate_corpus(&hyps, &insts, encoder)?,
                });
            }
            let split = data
                .file_stem()
                .map_or("eval".into(), |s| s.to_string_lossy().into_owned());
            let report = Report::new(&split, rows);
            write_file(&out.join("report.json"), &report.to_json()?)?;
            write_file(&out.join("report.md"), &report.to_markdown())?;
            print!("{}", report.to_markdown());
        }
        Command::Report { runs, out } => {
            let mut loaded = Vec::new();
            for r in &runs {
                let path = if r.is_dir() { r.join("report.json") } else { r.clone() };
                let name = if r.is_dir() { r } else { r.parent().unwrap_or(r) };
                let name = name
                    .file_name()
                    .map_or_else(|| name.display().to_string(), |n| n.to_string_lossy().into_owned());
                loaded.push((name, Report::load(&path)?));
            }
            let md = merge_reports(&loaded);
            match out {
                Some(p) => write_file(&p, &md)?,
                None => print!("{md}"),
            }
        }
        Command::Failures {
            data,
            predictions,
            n,
            metric,
            out,
        } => {
            let instances = load_jsonl(&data)?;
            let mut groups = Vec::new();
            for p in &predictions {
                groups.extend(group_predictions(read_predictions(p)?.0));
            }
            let (first_label, first) = groups.first().context("no predictions given")?;
            let (insts, _) = align(first, &instances, first_label)?;
            let mut systems = Vec::new();
            for (label, group) in &groups {
                let by_id: HashMap<&str, &str> = group.iter().map(|p| (p.id.as_str(), p.hypothesis.as_str())).collect();
                let hyps = insts
                    .iter()
                    .map(|i| by_id.get(i.id.as_str()).map_or_else(String::new, |h| h.to_string()))
                    .collect();
                systems.push(SystemOutputs {
                    label: label.clone(),
                    hypotheses: hyps,
                });
            }
            let md = failure_report(&systems, &insts, n, metric)?;
            match out {
                Some(p) => write_file(&p, &md)?,
                None => print!("{md}"),
            }
        }
        Command::OracleCheck {
            model,
            data,
            instances,
            subset_size,
            len,
            seed,
            out,
            cfg,
        } => {
            let map = cfg.load()?;
            let dc = map.decode_config()?;
            let trained = load_model_dir(&model)?;
            let insts = load_jsonl(&data)?;
            let audit = oracle_audit(
                &trained.params,
                &trained.vocab,
                &insts,
                &dc,
                &AuditConfig {
                    instances,
                    subset_size,
                    len,
                    seed,
                },
            )?;
            if let Some(p) = out {
                write_file(&p, &audit.to_json()?)?;
            }
            println!("{}", audit.summary());
            if audit.bound_violations() > 0 {
                bail!("a decoder exceeded the exhaustive optimum");
            }
        }
        Command::Run { config, out, overrides } => {
            let map = ConfigArgs {
                config: Some(config),
                overrides,
            }
            .load()?;
            let summary = run_experiment(&map, &out)?;
            print!("{}", summary.report.to_markdown());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
