//! Result tables: `report.json` for machines, `report.md` for people.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::MetricsReport;

/// Footnotes attached to every rendered table.
pub const FOOTNOTES: [&str; 3] = [
    "\\* METEOR\\* is meteor_simple: exact unigram matches only, no stemming or synonyms. Not comparable with METEOR.",
    "\\* Embed\\* is embed_score: greedy cosine matching of toy-LM hidden states. Not comparable with BERTScore.",
    "BLEU-4 is corpus-level with smoothing, ROUGE-L is the LCS F1 (β = 1), Cider is CIDEr-D (σ = 6, ×10).",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub system: String,
    pub objective: String,
    pub strategy: String,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub split: String,
    pub rows: Vec<ReportRow>,
    pub notes: Vec<String>,
}

impl Report {
    pub fn new(split: &str, rows: Vec<ReportRow>) -> Self {
        Self {
            split: split.to_string(),
            rows,
            notes: FOOTNOTES.iter().map(|s| s.replace('\\', "")).collect(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let src = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&src)?)
    }

    pub fn to_markdown(&self) -> String {
        let rows: Vec<(String, &MetricsReport)> = self.rows.iter().map(|r| (r.system.clone(), &r.metrics)).collect();
        let mut out = format!("# Results ({} split)\n\n", self.split);
        out.push_str(&render_table(&rows));
        out
    }
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.2}"))
}

/// One row per labelled result, five metric columns, then the footnotes.
pub fn render_table(rows: &[(String, &MetricsReport)]) -> String {
    let mut out = String::from("| System | Bleu-4 | METEOR\\* | ROUGE-L | Cider | Embed\\* |\n");
    out.push_str("|---|---:|---:|---:|---:|---:|\n");
    for (label, m) in rows {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} |",
            label,
            cell(Some(m.bleu4)),
            cell(Some(m.meteor_simple)),
            cell(Some(m.rouge_l)),
            cell(Some(m.cider)),
            cell(m.embed_score)
        );
    }
    out.push('\n');
    for f in FOOTNOTES {
        out.push_str(f);
        out.push_str("\n\n");
    }
    out.pop();
    out
}

/// One table over several runs' reports, rows labelled `run: system` in
/// argument order.
pub fn merge_reports(runs: &[(String, Report)]) -> String {
    let rows: Vec<(String, &MetricsReport)> = runs
        .iter()
        .flat_map(|(name, rep)| {
            rep.rows
                .iter()
                .map(move |r| (format!("{name}: {}", r.system), &r.metrics))
        })
        .collect();
    let mut out = String::from("# Results\n\n");
    out.push_str(&render_table(&rows));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(system: &str, bleu: f64) -> ReportRow {
        ReportRow {
            system: system.into(),
            objective: "base".into(),
            strategy: "greedy".into(),
            metrics: MetricsReport {
                bleu4: bleu,
                meteor_simple: 1.0,
                rouge_l: 2.0,
                cider: 3.0,
                embed_score: None,
                count: 4,
            },
        }
    }

    #[test]
    fn table_has_one_row_per_result_and_footnotes() {
        let r = Report::new("test", vec![row("a/greedy", 10.0), row("b/cold", 1.5)]);
        let md = r.to_markdown();
        let body: Vec<&str> = md.lines().filter(|l| l.starts_with("| ")).collect();
        assert_eq!(body.len(), 3);
        assert!(body[1].starts_with("| a/greedy | 10.00"));
        assert!(body[2].ends_with("| n/a |"));
        assert!(md.contains("Not comparable with METEOR"));
        assert!(md.contains("Not comparable with BERTScore"));
    }

    #[test]
    fn json_round_trips_and_merge_keeps_order() {
        let a = Report::new("test", vec![row("x/greedy", 1.0)]);
        let b = Report::new("test", vec![row("y/cold", 2.0)]);
        let back: Report = serde_json::from_str(&a.to_json().unwrap()).unwrap();
        assert_eq!(back, a);
        let md = merge_reports(&[("runA".into(), a), ("runB".into(), b)]);
        let body: Vec<&str> = md.lines().filter(|l| l.starts_with("| run")).collect();
        assert_eq!(
            body,
            [
                "| runA: x/greedy | 1.00 | 1.00 | 2.00 | 3.00 | n/a |",
                "| runB: y/cold | 2.00 | 1.00 | 2.00 | 3.00 | n/a |"
            ]
        );
        let header = md.lines().find(|l| l.starts_with("| System")).unwrap();
        assert_eq!(header.matches('|').count(), 7);
    }
}
