//! Flat `key = value` configuration.
//!
//! One assignment per line, `#` comment lines, blank lines ignored.
//! `include = path` splices another file in at that point, with relative
//! paths resolved against the including file. Later assignments win. The
//! shipped defaults are always loaded first and define the set of valid keys.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{synth_corpus, AbductiveInstance, SynthCorpus, WorldConfig};
use crate::decoding::{DecodeConfig, Strategy};
use crate::error::{Error, Result};
use crate::knowledge::{RuleTable, DEFAULT_RULES};
use crate::lm::ModelConfig;
use crate::training::{Objective, TrainConfig};

use super::failures::SentenceMetric;

/// The shipped defaults file.
pub const DEFAULTS: &str = include_str!("../../config/defaults.conf");

/// Keys whose relative values are resolved against the file they appear in.
const PATH_KEYS: [&str; 2] = ["data.dir", "data.rules"];

const MAX_INCLUDE_DEPTH: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigMap {
    entries: Vec<(String, String)>,
}

fn parse_lines(src: &str, origin: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in src.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Parse {
                path: origin.into(),
                line: i + 1,
                msg: format!("expected `key = value`, got {line:?}"),
            });
        };
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::Parse {
                path: origin.into(),
                line: i + 1,
                msg: "empty key".into(),
            });
        }
        out.push((i + 1, k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl ConfigMap {
    /// The shipped defaults.
    pub fn defaults() -> Self {
        let entries = parse_lines(DEFAULTS, "defaults.conf")
            .expect("shipped defaults parse")
            .into_iter()
            .map(|(_, k, v)| (k, v))
            .collect();
        Self { entries }
    }

    /// Defaults overridden by the file at `path`.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let mut map = Self::defaults();
        map.apply_file(path.as_ref(), &mut Vec::new())?;
        Ok(map)
    }

    /// Applies overrides from a string. `base_dir` resolves includes and
    /// relative paths; without it they are taken as given.
    pub fn apply_str(&mut self, src: &str, origin: &str, base_dir: Option<&Path>) -> Result<()> {
        self.apply_src(src, origin, base_dir, &mut Vec::new())
    }

    fn apply_file(&mut self, path: &Path, stack: &mut Vec<PathBuf>) -> Result<()> {
        let canon = fs::canonicalize(path).map_err(|e| Error::io(path, e))?;
        if stack.contains(&canon) {
            return Err(Error::Config(format!("include cycle through {}", path.display())));
        }
        if stack.len() >= MAX_INCLUDE_DEPTH {
            return Err(Error::Config("includes nested too deeply".into()));
        }
        let src = fs::read_to_string(&canon).map_err(|e| Error::io(path, e))?;
        stack.push(canon.clone());
        let r = self.apply_src(&src, &path.display().to_string(), canon.parent(), stack);
        stack.pop();
        r
    }

    fn apply_src(&mut self, src: &str, origin: &str, base_dir: Option<&Path>, stack: &mut Vec<PathBuf>) -> Result<()> {
        let resolve = |v: &str| match base_dir {
            Some(dir) if !v.is_empty() && Path::new(v).is_relative() => dir.join(v),
            _ => PathBuf::from(v),
        };
        for (line, k, v) in parse_lines(src, origin)? {
            if k == "include" {
                self.apply_file(&resolve(&v), stack)?;
                continue;
            }
            let v = if PATH_KEYS.contains(&k.as_str()) {
                resolve(&v).display().to_string()
            } else {
                v
            };
            self.set(&k, &v).map_err(|e| Error::Parse {
                path: origin.into(),
                line,
                msg: e.to_string(),
            })?;
        }
        Ok(())
    }

    /// Overrides one key; unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(slot) => {
                slot.1 = value.trim().to_string();
                Ok(())
            }
            None => Err(Error::Config(format!("unknown configuration key {key:?}"))),
        }
    }

    /// Applies a `key=value` override as given on a command line.
    pub fn set_assignment(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got {assignment:?}")))?;
        self.set(k.trim(), v)
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::Config(format!("unknown configuration key {key:?}")))
    }

    pub fn parse<T>(&self, key: &str) -> Result<T>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        let v = self.get(key)?;
        v.parse().map_err(|e| Error::Config(format!("{key} = {v:?}: {e}")))
    }

    fn path(&self, key: &str) -> Result<Option<PathBuf>> {
        let v = self.get(key)?;
        Ok((!v.is_empty()).then(|| PathBuf::from(v)))
    }

    /// Every key with its final value, in defaults order. Loading this text
    /// reproduces the map exactly.
    pub fn to_resolved(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    pub fn decode_config(&self) -> Result<DecodeConfig> {
        let cfg = DecodeConfig {
            strategy: self.parse("decode.strategy")?,
            temperature: self.parse("decode.temperature")?,
            top_p: self.parse("decode.top_p")?,
            beam_width: self.parse("decode.beam_width")?,
            max_len: self.parse("decode.max_len")?,
            delorean_iters: self.parse("decode.delorean_iters")?,
            delorean_step: self.parse("decode.delorean_step")?,
            delorean_mix: self.parse("decode.delorean_mix")?,
            cold_iters: self.parse("decode.cold_iters")?,
            cold_step: self.parse("decode.cold_step")?,
            cold_sigma0: self.parse("decode.cold_sigma0")?,
            cold_sigma_min: self.parse("decode.cold_sigma_min")?,
            cold_init: self.parse("decode.cold_init")?,
            cold_rank_every: self.parse("decode.cold_rank_every")?,
            weight_fluency: self.parse("decode.weight_fluency")?,
            weight_future: self.parse("decode.weight_future")?,
            top_k: self.parse("decode.top_k")?,
            seed: self.parse("decode.seed")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            objective: self.parse("train.objective")?,
            learning_rate: self.parse("train.learning_rate")?,
            momentum: self.parse("train.momentum")?,
            batch_size: self.parse("train.batch_size")?,
            epochs: self.parse("train.epochs")?,
            clip_norm: self.parse("train.clip_norm")?,
            seed: self.parse("train.seed")?,
            checkpoint_every: self.parse("train.checkpoint_every")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Model shape for a vocabulary of `vocab_size` tokens.
    pub fn model_config(&self, vocab_size: usize) -> Result<ModelConfig> {
        let cfg = ModelConfig {
            vocab_size,
            d_model: self.parse("model.d_model")?,
            n_layers: self.parse("model.n_layers")?,
            n_heads: self.parse("model.n_heads")?,
            d_ff: self.parse("model.d_ff")?,
            max_len: self.parse("model.max_len")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn rules(&self) -> Result<RuleTable> {
        match self.path("data.rules")? {
            Some(p) => RuleTable::load(p),
            None => RuleTable::parse(DEFAULT_RULES, "built-in rules"),
        }
    }

    /// Train, dev and test instances as configured.
    pub fn corpus(&self) -> Result<SynthCorpus> {
        match self.get("data.source")? {
            "synth" => {
                let size = self.parse("data.size")?;
                synth_corpus(self.parse("data.seed")?, size, WorldConfig::proportional(size))
            }
            "dir" => {
                let dir = self
                    .path("data.dir")?
                    .ok_or_else(|| Error::Config("data.source = dir needs data.dir".into()))?;
                let load = |name: &str| crate::data::load_jsonl(dir.join(format!("{name}.jsonl")));
                Ok(SynthCorpus {
                    train: load("train")?,
                    dev: load("dev")?,
                    test: load("test")?,
                })
            }
            other => Err(Error::Config(format!("unknown data.source {other:?}"))),
        }
    }

    pub fn experiment(&self) -> Result<Experiment> {
        let systems = self
            .get("run.systems")?
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::parse)
            .collect::<Result<Vec<System>>>()?;
        if systems.is_empty() {
            return Err(Error::Config("run.systems lists no systems".into()));
        }
        for (i, s) in systems.iter().enumerate() {
            if systems[..i].contains(s) {
                return Err(Error::Config(format!("system {s} listed twice")));
            }
        }
        Ok(Experiment {
            systems,
            split: self.parse("run.split")?,
            limit: self.parse("run.limit")?,
            failures: self.parse("run.failures")?,
            failure_metric: self.parse("run.failure_metric")?,
            embed_score: self.parse("run.embed_score")?,
        })
    }
}

/// A trained model paired with a decoding strategy; one report row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct System {
    pub objective: Objective,
    pub strategy: Strategy,
}

impl System {
    pub fn label(&self) -> String {
        format!("{}/{}", self.objective, self.strategy)
    }

    /// File-name-safe label.
    pub fn slug(&self) -> String {
        format!("{}-{}", self.objective, self.strategy)
    }
}

impl std::fmt::Display for System {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for System {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (o, st) = s
            .split_once('/')
            .ok_or_else(|| Error::Config(format!("system {s:?} is not objective/strategy")))?;
        let sys = System {
            objective: o.trim().parse()?,
            strategy: st.trim().parse()?,
        };
        if sys.strategy.is_supervised() && sys.objective == Objective::ObservationLm {
            return Err(Error::Config(format!(
                "{s}: {} decoding needs a model trained on hypotheses",
                sys.strategy
            )));
        }
        Ok(sys)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }

    pub fn select(self, corpus: &SynthCorpus) -> &[AbductiveInstance] {
        match self {
            Split::Train => &corpus.train,
            Split::Dev => &corpus.dev,
            Split::Test => &corpus.test,
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub systems: Vec<System>,
    pub split: Split,
    pub limit: usize,
    pub failures: usize,
    pub failure_metric: SentenceMetric,
    pub embed_score: bool,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoding::ColdInit;

    #[test]
    fn defaults_parse_into_every_section() {
        let m = ConfigMap::defaults();
        let d = m.decode_config().unwrap();
        assert_eq!(d.strategy, Strategy::Greedy);
        assert_eq!(d.top_p, 0.9);
        assert_eq!(d.cold_init, ColdInit::Uniform);
        let t = m.train_config().unwrap();
        assert_eq!(t.objective, Objective::Supervised(crate::data::Variant::Base));
        assert_eq!(m.model_config(40).unwrap().d_model, 32);
        let e = m.experiment().unwrap();
        assert_eq!(e.systems.len(), 3);
        assert_eq!(e.systems[0].label(), "base/greedy");
        assert!(!m.rules().unwrap().is_empty());
    }

    #[test]
    fn overrides_win_and_unknown_keys_fail() {
        let mut m = ConfigMap::defaults();
        m.apply_str("# comment\n\ndecode.seed = 7\ndecode.seed=8\n", "x", None)
            .unwrap();
        assert_eq!(m.decode_config().unwrap().seed, 8);
        let err = m.apply_str("decode.sed = 1\n", "x", None).unwrap_err();
        assert!(err.to_string().contains("x:1"), "{err}");
        assert!(m.apply_str("no equals sign\n", "x", None).is_err());
        assert!(m.set_assignment("train.epochs=3").is_ok());
        assert_eq!(m.train_config().unwrap().epochs, 3);
    }

    #[test]
    fn resolved_text_round_trips() {
        let mut m = ConfigMap::defaults();
        m.set("run.systems", "knowledge_emb/beam, obs_lm/cold").unwrap();
        let mut again = ConfigMap::defaults();
        again.apply_str(&m.to_resolved(), "resolved", None).unwrap();
        assert_eq!(again, m);
    }

    #[test]
    fn includes_resolve_relative_to_the_including_file() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir(dir.path().join("sub")).unwrap();
        fs::write(
            dir.path().join("sub/base.conf"),
            "train.epochs = 4\ndata.rules = rules.tsv\n",
        )
        .unwrap();
        fs::write(dir.path().join("exp.conf"), "include = sub/base.conf\ntrain.seed = 9\n").unwrap();
        let m = ConfigMap::from_file(dir.path().join("exp.conf")).unwrap();
        let t = m.train_config().unwrap();
        assert_eq!((t.epochs, t.seed), (4, 9));
        assert!(m.get("data.rules").unwrap().ends_with("sub/rules.tsv"));
    }

    #[test]
    fn include_cycles_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.conf"), "include = b.conf\n").unwrap();
        fs::write(dir.path().join("b.conf"), "include = a.conf\n").unwrap();
        assert!(ConfigMap::from_file(dir.path().join("a.conf")).is_err());
    }

    #[test]
    fn systems_are_validated() {
        assert!("obs_lm/greedy".parse::<System>().is_err());
        assert!("base".parse::<System>().is_err());
        assert!("knowledge_text/cold".parse::<System>().is_ok());
        let mut m = ConfigMap::defaults();
        m.set("run.systems", "base/greedy, base/greedy").unwrap();
        assert!(m.experiment().is_err());
    }
}
