//! Worst-case dumps for manual error analysis.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::data::AbductiveInstance;
use crate::error::{Error, Result};
use crate::metrics::{bleu4, meteor_simple_sentence, rouge_l_sentence};

/// Per-sentence metric used to rank failure cases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SentenceMetric {
    Bleu4,
    RougeL,
    MeteorSimple,
}

impl SentenceMetric {
    pub fn name(self) -> &'static str {
        match self {
            SentenceMetric::Bleu4 => "bleu4",
            SentenceMetric::RougeL => "rouge_l",
            SentenceMetric::MeteorSimple => "meteor_simple",
        }
    }

    pub fn score(self, prediction: &str, references: &[String]) -> f64 {
        if references.is_empty() {
            return 0.0;
        }
        match self {
            SentenceMetric::Bleu4 => {
                bleu4(&[prediction.to_string()], &[references]).expect("one prediction, nonempty references")
            }
            SentenceMetric::RougeL => rouge_l_sentence(prediction, references),
            SentenceMetric::MeteorSimple => meteor_simple_sentence(prediction, references),
        }
    }
}

impl FromStr for SentenceMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bleu4" => Ok(SentenceMetric::Bleu4),
            "rouge_l" => Ok(SentenceMetric::RougeL),
            "meteor_simple" => Ok(SentenceMetric::MeteorSimple),
            other => Err(Error::Config(format!("unknown failure metric {other:?}"))),
        }
    }
}

/// One system's hypotheses, aligned with the instances.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemOutputs {
    pub label: String,
    pub hypotheses: Vec<String>,
}

/// Markdown blocks for the `n` instances on which the first system scores
/// lowest under `metric` (ascending, earlier instances first on ties). Each
/// block lists both observations, the gold hypothesis, every system's
/// hypothesis and an empty `category:` line for manual tagging
/// (causal-chain, negation, open-domain over-generation).
pub fn failure_report(
    systems: &[SystemOutputs],
    instances: &[AbductiveInstance],
    n: usize,
    metric: SentenceMetric,
) -> Result<String> {
    let Some(primary) = systems.first() else {
        return Err(Error::Input("failure report needs at least one system".into()));
    };
    if let Some(s) = systems.iter().find(|s| s.hypotheses.len() != instances.len()) {
        return Err(Error::Input(format!(
            "{} has {} hypotheses for {} instances",
            s.label,
            s.hypotheses.len(),
            instances.len()
        )));
    }
    let mut ranked: Vec<(usize, f64)> = primary
        .hypotheses
        .iter()
        .zip(instances)
        .map(|(h, inst)| metric.score(h, &inst.gold_hyps))
        .enumerate()
        .collect();
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1));

    let mut out = format!(
        "# Failure cases\n\nLowest {} of {} by {} ({}).\n",
        n.min(ranked.len()),
        primary.label,
        metric.name(),
        if ranked.is_empty() { "no instances" } else { "ascending" }
    );
    for (rank, &(i, score)) in ranked.iter().take(n).enumerate() {
        let inst = &instances[i];
        let _ = write!(
            out,
            "\n## Case {}: {} ({} = {:.2})\n\n- past observation: {}\n- future observation: {}\n- gold: {}\n",
            rank + 1,
            inst.id,
            metric.name(),
            score,
            inst.obs1,
            inst.obs2,
            inst.gold().unwrap_or("(none)")
        );
        for s in systems {
            let _ = writeln!(out, "- {}: {}", s.label, s.hypotheses[i]);
        }
        out.push_str("- category:\n");
    }
    Ok(out)
}
