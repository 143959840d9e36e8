//! Report artifacts: per-round history tables, run summaries, feature
//! importance and the cross-run comparison table.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::boost::FeatureImportance;
use crate::error::{Error, Result};
use crate::metrics::{MetricSummary, RoundMetrics};

pub const HISTORY_COLUMNS: [&str; 8] = [
    "round",
    "accuracy",
    "precision",
    "recall",
    "f1",
    "loss",
    "num_eval_examples",
    "num_fit_clients",
];

pub const SUMMARY_FILE: &str = "summary.json";
pub const HISTORY_FILE: &str = "history.csv";

/// Appends rounds to a history table, flushing after every row so an
/// interrupted run keeps all completed rounds.
pub struct HistoryWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl HistoryWriter<BufWriter<File>> {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::path(path, e))?;
        Self::new(BufWriter::new(file))
    }
}

impl<W: Write> HistoryWriter<W> {
    pub fn new(writer: W) -> Result<Self> {
        let mut inner = csv::Writer::from_writer(writer);
        inner.write_record(HISTORY_COLUMNS)?;
        inner.flush()?;
        Ok(Self { inner })
    }

    pub fn append(&mut self, m: &RoundMetrics) -> Result<()> {
        self.inner.write_record([
            m.round.to_string(),
            m.accuracy.to_string(),
            m.precision.to_string(),
            m.recall.to_string(),
            m.f1.to_string(),
            m.loss.to_string(),
            m.num_eval_examples.to_string(),
            m.num_fit_clients.to_string(),
        ])?;
        self.inner.flush()?;
        Ok(())
    }

    pub fn into_inner(self) -> Result<W> {
        self.inner
            .into_inner()
            .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
    }
}

pub fn write_history<W: Write>(writer: W, rounds: &[RoundMetrics]) -> Result<W> {
    let mut w = HistoryWriter::new(writer)?;
    for r in rounds {
        w.append(r)?;
    }
    w.into_inner()
}

pub fn read_history(path: &Path) -> Result<Vec<RoundMetrics>> {
    let mut rdr = csv::Reader::from_path(path)?;
    if rdr.headers()?.iter().ne(HISTORY_COLUMNS) {
        return Err(Error::malformed("history", "unexpected header"));
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let bad = || Error::malformed("history", format!("bad row {row:?}"));
        let f = |i: usize| row[i].parse::<f64>().map_err(|_| bad());
        out.push(RoundMetrics {
            round: row[0].parse().map_err(|_| bad())?,
            accuracy: f(1)?,
            precision: f(2)?,
            recall: f(3)?,
            f1: f(4)?,
            loss: f(5)?,
            num_eval_examples: row[6].parse().map_err(|_| bad())?,
            num_fit_clients: row[7].parse().map_err(|_| bad())?,
        });
    }
    Ok(out)
}

/// Machine-readable summary of a completed run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run: String,
    /// `central`, `fedavg` or `fedprox`.
    pub kind: String,
    pub mu: Option<f64>,
    pub rounds: usize,
    pub best_f1: Option<f64>,
    pub best_round: Option<usize>,
    pub mean_f1: Option<f64>,
    pub std_f1: Option<f64>,
    /// Secondary column: test-size-weighted mean of per-client F1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weighted_f1: Option<MetricSummary>,
    /// Full resolved configuration of the run.
    pub config: serde_json::Value,
}

impl RunSummary {
    pub fn new(
        run: impl Into<String>,
        kind: impl Into<String>,
        mu: Option<f64>,
        rounds: usize,
        f1: Option<MetricSummary>,
        config: serde_json::Value,
    ) -> Self {
        Self {
            run: run.into(),
            kind: kind.into(),
            mu,
            rounds,
            best_f1: f1.map(|s| s.best_value),
            best_round: f1.map(|s| s.best_round),
            mean_f1: f1.map(|s| s.mean),
            std_f1: f1.map(|s| s.std_dev),
            weighted_f1: None,
            config,
        }
    }

    pub fn is_central(&self) -> bool {
        self.kind == "central"
    }
}

/// Writes `bytes` to `path` through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp).map_err(|e| Error::path(&tmp, e))?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::path(path, e))?;
    Ok(())
}

pub fn write_summary(dir: &Path, summary: &RunSummary) -> Result<()> {
    let mut json = serde_json::to_string_pretty(summary)?;
    json.push('\n');
    write_atomic(&dir.join(SUMMARY_FILE), json.as_bytes())
}

pub fn read_summary(dir: &Path) -> Result<RunSummary> {
    let path = dir.join(SUMMARY_FILE);
    let text = fs::read_to_string(&path).map_err(|_| Error::MissingRun(dir.to_path_buf()))?;
    Ok(serde_json::from_str(&text)?)
}

/// `rank,feature,gain` rows, highest gain first.
pub fn write_importance<W: Write>(writer: W, importance: &FeatureImportance) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["rank", "feature", "gain"])?;
    for (i, (name, gain)) in importance.ranking().into_iter().enumerate() {
        w.write_record([(i + 1).to_string(), name.to_string(), gain.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub run: String,
    pub kind: String,
    pub mu: Option<f64>,
    pub best_f1: Option<f64>,
    pub best_round: Option<usize>,
    pub mean_f1: Option<f64>,
    pub std_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
    /// Best federated F1 divided by the centralized best F1.
    pub privacy_cost_ratio: Option<f64>,
    /// Federated runs ordered by ascending F1 standard deviation.
    pub stability_ranking: Vec<String>,
    pub note: Option<String>,
}

/// `federated_best / central_best`.
pub fn privacy_cost_ratio(federated_best: f64, central_best: f64) -> Option<f64> {
    (central_best > 0.0).then(|| federated_best / central_best)
}

pub fn compare(summaries: &[RunSummary]) -> Result<ComparisonReport> {
    if summaries.is_empty() {
        return Err(Error::MissingRun(PathBuf::from("<none>")));
    }
    let rows: Vec<ComparisonRow> = summaries
        .iter()
        .map(|s| ComparisonRow {
            run: s.run.clone(),
            kind: s.kind.clone(),
            mu: s.mu,
            best_f1: s.best_f1,
            best_round: s.best_round,
            mean_f1: s.mean_f1,
            std_f1: s.std_f1,
        })
        .collect();
    let central = summaries
        .iter()
        .filter(|s| s.is_central())
        .filter_map(|s| s.best_f1)
        .reduce(f64::max);
    let federated = summaries
        .iter()
        .filter(|s| !s.is_central())
        .filter_map(|s| s.best_f1)
        .reduce(f64::max);
    let (ratio, note) = match (federated, central) {
        (Some(f), Some(c)) => (privacy_cost_ratio(f, c), None),
        (Some(_), None) => (None, Some("no centralized run; ratio omitted".to_string())),
        (None, Some(_)) => (None, Some("no federated run; ratio omitted".to_string())),
        (None, None) => (None, Some("no completed rounds; ratio omitted".to_string())),
    };
    let mut fed_rows: Vec<&RunSummary> = summaries
        .iter()
        .filter(|s| !s.is_central() && s.std_f1.is_some())
        .collect();
    fed_rows.sort_by(|a, b| a.std_f1.unwrap().total_cmp(&b.std_f1.unwrap()));
    Ok(ComparisonReport {
        rows,
        privacy_cost_ratio: ratio,
        stability_ranking: fed_rows.into_iter().map(|s| s.run.clone()).collect(),
        note,
    })
}

impl ComparisonReport {
    /// Aligned plain-text table.
    pub fn to_text(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
        let header = ["strategy", "best_f1", "best_round", "mean_f1", "std_f1"];
        let mut cells: Vec<[String; 5]> = vec![header.map(String::from)];
        for r in &self.rows {
            cells.push([
                r.run.clone(),
                opt(r.best_f1),
                r.best_round.map_or("-".into(), |b| b.to_string()),
                opt(r.mean_f1),
                opt(r.std_f1),
            ]);
        }
        let widths: Vec<usize> = (0..5)
            .map(|c| cells.iter().map(|row| row[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (i, row) in cells.iter().enumerate() {
            let line: Vec<String> = row
                .iter()
                .enumerate()
                .map(|(c, v)| {
                    if c == 0 {
                        format!("{v:<w$}", w = widths[c])
                    } else {
                        format!("{v:>w$}", w = widths[c])
                    }
                })
                .collect();
            let _ = writeln!(out, "{}", line.join("  ").trim_end());
            if i == 0 {
                let total = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
                let _ = writeln!(out, "{}", "-".repeat(total));
            }
        }
        out.push('\n');
        match self.privacy_cost_ratio {
            Some(r) => {
                let _ = writeln!(out, "federated/central best F1 ratio: {r:.4}");
            }
            None => {
                let _ = writeln!(
                    out,
                    "federated/central best F1 ratio: n/a ({})",
                    self.note.as_deref().unwrap_or("missing run")
                );
            }
        }
        if !self.stability_ranking.is_empty() {
            let _ = writeln!(
                out,
                "stability ranking (lowest std first): {}",
                self.stability_ranking.join(", ")
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary(run: &str, kind: &str, best: f64, std: f64) -> RunSummary {
        RunSummary {
            run: run.into(),
            kind: kind.into(),
            mu: None,
            rounds: 10,
            best_f1: Some(best),
            best_round: Some(3),
            mean_f1: Some(best - 0.05),
            std_f1: Some(std),
            weighted_f1: None,
            config: serde_json::Value::Null,
        }
    }

    #[test]
    fn ratio_arithmetic() {
        let r = compare(&[
            summary("central", "central", 0.80, 0.01),
            summary("fedavg", "fedavg", 0.72, 0.03),
        ])
        .unwrap();
        assert!((r.privacy_cost_ratio.unwrap() - 0.90).abs() < 1e-12);
        let published = privacy_cost_ratio(0.7628, 0.8285).unwrap();
        assert!((published - 0.9207).abs() < 1e-4);
    }

    #[test]
    fn ratio_omitted_without_central() {
        let r = compare(&[
            summary("fedavg", "fedavg", 0.72, 0.03),
            summary("fedprox_mu1", "fedprox", 0.70, 0.01),
        ])
        .unwrap();
        assert!(r.privacy_cost_ratio.is_none());
        assert!(r.note.is_some());
        assert_eq!(r.stability_ranking, vec!["fedprox_mu1", "fedavg"]);
        let text = r.to_text();
        assert!(text.contains("n/a"));
        assert!(text.starts_with("strategy"));
        assert!(compare(&[]).is_err());
    }

    #[test]
    fn history_round_trip() {
        let m = RoundMetrics {
            round: 1,
            accuracy: 0.75,
            precision: 0.5,
            recall: 1.0,
            f1: 2.0 / 3.0,
            loss: 0.5125,
            num_eval_examples: 4,
            num_fit_clients: 2,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(HISTORY_FILE);
        let mut w = HistoryWriter::create(&path).unwrap();
        w.append(&m).unwrap();
        drop(w);
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "round,accuracy,precision,recall,f1,loss,num_eval_examples,num_fit_clients"
        );
        assert_eq!(read_history(&path).unwrap(), vec![m]);
    }
}
