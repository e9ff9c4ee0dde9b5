//! Pooled tables and plot series built from score reports and traces.
//!
//! CSV columns are fixed: `group,task,sum_s,fp,fn,precision,recall,estp_f1`
//! for tables, `label,recall,precision` for PR series and
//! `label,aps,overall_f1` for APS series. Real values are written rounded to
//! six significant digits in the shortest decimal form that parses back to
//! the rounded value.

use std::collections::BTreeSet;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::episode::{ProactiveType, TaskType};
use crate::num::Scalar;
use crate::runtime::TraceSummary;
use crate::scoring::{Aggregate, ScoreError, ScoreReport, FP_ATTRIBUTION};

pub const TABLE_COLUMNS: [&str; 8] = ["group", "task", "sum_s", "fp", "fn", "precision", "recall", "estp_f1"];
pub const PR_COLUMNS: [&str; 3] = ["label", "recall", "precision"];
pub const APS_COLUMNS: [&str; 3] = ["label", "aps", "overall_f1"];

/// Group and task cell used for the per-proactive-type summary rows.
pub const ALL: &str = "All";
pub const OVERALL: &str = "Overall";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("reports were produced with different configurations: {0:?}")]
    ConfigMismatch(Vec<String>),
    #[error("duplicate label {0:?}")]
    DuplicateLabel(String),
    #[error("{0} has no label")]
    MissingLabel(String),
    #[error("summary for {0} carries no measured aps")]
    MissingAps(String),
    #[error("{0}")]
    Score(#[from] ScoreError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Rounds to six significant digits.
pub fn round6(x: f64) -> f64 {
    if !x.is_finite() {
        return x;
    }
    format!("{x:.5e}").parse().expect("formatted float parses")
}

/// Decimal form written to CSV; parsing it gives back `round6(x)`.
pub fn fmt6(x: f64) -> String {
    format!("{}", round6(x))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    /// Proactive type name, or [`OVERALL`].
    pub group: String,
    /// Task code, [`ALL`], or [`OVERALL`].
    pub task: String,
    pub sum_s: f64,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub estp_f1: f64,
}

impl TableRow {
    fn new<T: Scalar>(group: &str, task: &str, a: &Aggregate<T>) -> Self {
        Self {
            group: group.into(),
            task: task.into(),
            sum_s: a.sum_s.to_f64_lossy(),
            fp: a.fp_count,
            fn_: a.fn_count,
            precision: a.precision.to_f64_lossy(),
            recall: a.recall.to_f64_lossy(),
            estp_f1: a.estp_f1.to_f64_lossy(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub row_count: usize,
    pub config_hash: Option<String>,
    pub episodes: Vec<String>,
    pub fp_attribution: String,
    pub rows: Vec<TableRow>,
}

impl Table {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn overall(&self) -> Option<&TableRow> {
        self.rows.iter().find(|r| r.group == OVERALL)
    }

    pub fn row(&self, group: &str, task: &str) -> Option<&TableRow> {
        self.rows.iter().find(|r| r.group == group && r.task == task)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", TABLE_COLUMNS.join(","))?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                r.group,
                r.task,
                fmt6(r.sum_s),
                r.fp,
                r.fn_,
                fmt6(r.precision),
                fmt6(r.recall),
                fmt6(r.estp_f1)
            )?;
        }
        Ok(())
    }
}

/// Micro-averaged table: per task, `All` per proactive type, then `Overall`.
/// Cells pool sum_s, FP and FN across reports before applying the F1 formula.
pub fn table_by_task<T: Scalar>(reports: &[ScoreReport<T>]) -> Result<Table, ReportError> {
    let pooled = match ScoreReport::pool(reports) {
        Ok(p) => p,
        Err(ScoreError::ConfigMismatch(h)) => return Err(ReportError::ConfigMismatch(h)),
        Err(e) => return Err(e.into()),
    };
    let Some(pooled) = pooled else {
        return Ok(Table {
            row_count: 0,
            config_hash: None,
            episodes: Vec::new(),
            fp_attribution: FP_ATTRIBUTION.into(),
            rows: Vec::new(),
        });
    };
    let mut rows = Vec::new();
    for pt in ProactiveType::ALL {
        for task in TaskType::ALL.iter().filter(|t| t.proactive_type() == pt) {
            if let Some(cell) = pooled.per_task.get(task) {
                rows.push(TableRow::new(pt.as_str(), task.as_str(), cell));
            }
        }
        if let Some(cell) = pooled.per_proactive.get(&pt) {
            rows.push(TableRow::new(pt.as_str(), ALL, cell));
        }
    }
    rows.push(TableRow::new(OVERALL, OVERALL, &pooled.totals));
    Ok(Table {
        row_count: rows.len(),
        config_hash: Some(pooled.config_hash.clone()),
        episodes: pooled.episodes.clone(),
        fp_attribution: pooled.fp_attribution.clone(),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub label: String,
    pub recall: f64,
    pub precision: f64,
}

fn label_of<T>(r: &ScoreReport<T>) -> Result<String, ReportError> {
    r.label.clone().ok_or_else(|| ReportError::MissingLabel(r.episodes.join("+")))
}

fn check_unique<'a>(labels: impl IntoIterator<Item = &'a str>) -> Result<(), ReportError> {
    let mut seen = BTreeSet::new();
    for l in labels {
        if !seen.insert(l) {
            return Err(ReportError::DuplicateLabel(l.into()));
        }
    }
    Ok(())
}

/// One recall/precision point per labelled report, in input order.
pub fn pr_points<T: Scalar>(reports: &[ScoreReport<T>]) -> Result<Vec<PrPoint>, ReportError> {
    let points = reports
        .iter()
        .map(|r| {
            Ok(PrPoint {
                label: label_of(r)?,
                recall: r.totals.recall.to_f64_lossy(),
                precision: r.totals.precision.to_f64_lossy(),
            })
        })
        .collect::<Result<Vec<_>, ReportError>>()?;
    check_unique(points.iter().map(|p| p.label.as_str()))?;
    Ok(points)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApsPoint {
    pub label: String,
    pub aps: f64,
    pub overall_f1: f64,
}

/// Pairs each trace summary with the score of the same run. The label comes
/// from the report, falling back to the summary's episode id.
pub fn aps_points<T: Scalar>(runs: &[(TraceSummary, ScoreReport<T>)]) -> Result<Vec<ApsPoint>, ReportError> {
    let points = runs
        .iter()
        .map(|(s, r)| {
            Ok(ApsPoint {
                label: r.label.clone().unwrap_or_else(|| s.episode.clone()),
                aps: s.aps.ok_or_else(|| ReportError::MissingAps(s.episode.clone()))?,
                overall_f1: r.totals.estp_f1.to_f64_lossy(),
            })
        })
        .collect::<Result<Vec<_>, ReportError>>()?;
    check_unique(points.iter().map(|p| p.label.as_str()))?;
    Ok(points)
}

pub fn write_pr_csv<W: Write>(mut w: W, points: &[PrPoint]) -> std::io::Result<()> {
    writeln!(w, "{}", PR_COLUMNS.join(","))?;
    for p in points {
        writeln!(w, "{},{},{}", p.label, fmt6(p.recall), fmt6(p.precision))?;
    }
    Ok(())
}

pub fn write_aps_csv<W: Write>(mut w: W, points: &[ApsPoint]) -> std::io::Result<()> {
    writeln!(w, "{}", APS_COLUMNS.join(","))?;
    for p in points {
        writeln!(w, "{},{},{}", p.label, fmt6(p.aps), fmt6(p.overall_f1))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcher::MatchConfig;
    use crate::scoring::{AnswerScorerSpec, ScoreConfig, TimeScoreSpec};
    use std::collections::BTreeMap;

    fn report(label: &str, sum_s: f64, fp: usize, fn_: usize, task: TaskType) -> ScoreReport<f64> {
        let config = ScoreConfig {
            matcher: MatchConfig::default(),
            answer: AnswerScorerSpec::exact(),
            time: TimeScoreSpec::default(),
        };
        let a = Aggregate::from_components(sum_s, fp, fn_);
        ScoreReport {
            label: Some(label.into()),
            episodes: vec![label.into()],
            config_hash: config.hash(),
            config,
            totals: a,
            per_gt: BTreeMap::new(),
            per_task: [(task, a)].into_iter().collect(),
            per_proactive: [(task.proactive_type(), a)].into_iter().collect(),
            fp_unattributed: 0,
            ignored_duplicates: 0,
            judge_clamped: 0,
            fp_attribution: FP_ATTRIBUTION.into(),
        }
    }

    #[test]
    fn two_episode_overall_is_one_half() {
        let t = table_by_task(&[report("a", 1.0, 0, 0, TaskType::OR), report("b", 0.0, 1, 1, TaskType::OR)]).unwrap();
        let overall = t.overall().unwrap();
        assert_eq!(overall.estp_f1, 0.5);
        // macro average would be (1 + 0) / 2 as well here, so check the pooled counts too
        assert_eq!((overall.sum_s, overall.fp, overall.fn_), (1.0, 1, 1));
    }

    #[test]
    fn single_task_collapses() {
        let t = table_by_task(&[report("a", 0.6, 1, 0, TaskType::OR)]).unwrap();
        assert_eq!(t.rows.len(), 3);
        let all = t.row("Explicit", ALL).unwrap();
        let overall = t.overall().unwrap();
        assert_eq!(all.estp_f1, overall.estp_f1);
        assert_eq!(t.row("Explicit", "OR").unwrap().estp_f1, overall.estp_f1);
    }

    #[test]
    fn micro_not_macro() {
        let t = table_by_task(&[report("a", 2.0, 0, 0, TaskType::OR), report("b", 0.0, 0, 4, TaskType::OR)]).unwrap();
        // pooled: 4 / (4 + 4) = 0.5, macro would give (1 + 0) / 2 = 0.5 too; use asymmetric counts
        assert_eq!(t.overall().unwrap().estp_f1, 0.5);
        let t = table_by_task(&[report("a", 3.0, 0, 0, TaskType::OR), report("b", 0.0, 0, 1, TaskType::OR)]).unwrap();
        assert_eq!(t.overall().unwrap().estp_f1, 6.0 / 7.0);
    }

    #[test]
    fn empty_and_mismatched() {
        let t = table_by_task::<f64>(&[]).unwrap();
        assert!(t.is_empty());
        assert_eq!(t.row_count, 0);
        let mut b = report("b", 1.0, 0, 0, TaskType::OR);
        b.config_hash = "deadbeef".into();
        match table_by_task(&[report("a", 1.0, 0, 0, TaskType::OR), b]) {
            Err(ReportError::ConfigMismatch(h)) => assert_eq!(h.len(), 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_round_trip_at_six_digits() {
        let t = table_by_task(&[report("a", 1.0 / 3.0, 2, 1, TaskType::TU)]).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "group,task,sum_s,fp,fn,precision,recall,estp_f1");
        for (line, row) in lines.zip(&t.rows) {
            let cells: Vec<&str> = line.split(',').collect();
            assert_eq!(cells[2].parse::<f64>().unwrap(), round6(row.sum_s));
            assert_eq!(cells[7].parse::<f64>().unwrap(), round6(row.estp_f1));
        }
        assert_eq!(fmt6(1.0 / 3.0), "0.333333");
        assert_eq!(fmt6(0.5), "0.5");
        assert_eq!(fmt6(1.0), "1");
    }

    #[test]
    fn pr_and_aps_series() {
        let rs = [report("perfect", 2.0, 0, 0, TaskType::OR), report("silent", 0.0, 0, 2, TaskType::OR)];
        let pts = pr_points(&rs).unwrap();
        assert_eq!((pts[0].recall, pts[0].precision), (1.0, 1.0));
        assert_eq!(pts[1].recall, 0.0);
        let dup = [report("x", 1.0, 0, 0, TaskType::OR), report("x", 1.0, 0, 0, TaskType::OR)];
        assert!(matches!(pr_points(&dup), Err(ReportError::DuplicateLabel(_))));

        let summary = TraceSummary {
            episode: "e".into(),
            decisions: 10,
            responses: 1,
            high_res_requests: 0,
            peak_tokens: 5,
            mean_current_tokens: 1.0,
            mean_uncompressed_tokens: 2.0,
            compression_ratio: Some(0.5),
            decisions_per_video_second: 2.0,
            aps: Some(1234.5),
        };
        let aps = aps_points(&[(summary.clone(), rs[0].clone())]).unwrap();
        assert_eq!(aps[0].aps, 1234.5);
        assert_eq!(aps[0].overall_f1, 1.0);
        let no_aps = TraceSummary { aps: None, ..summary };
        assert!(matches!(aps_points(&[(no_aps, rs[0].clone())]), Err(ReportError::MissingAps(_))));
    }
}
