//! Multi-seed aggregation of metrics logs.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clda_core::trainer::MetricRecord;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::svg::{self, Series};

pub const RUN_FILE: &str = "run.json";

/// Written next to every metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunStamp {
    pub command: String,
    pub seed: u64,
    pub version: String,
    pub deterministic: bool,
    pub config: serde_json::Value,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation; zero for a single value.
    pub std: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Stat> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Stat { mean, std, n })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregatePoint {
    pub step: usize,
    pub teacher_target_acc: Option<Stat>,
    pub student_target_acc: Option<Stat>,
    pub student_source_acc: Option<Stat>,
    pub mean_q: Stat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesEntry {
    pub log: String,
    pub seed: Option<u64>,
    pub records: Vec<MetricRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub version: String,
    pub seeds: Vec<u64>,
    pub deterministic: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: Option<serde_json::Value>,
    pub series: Vec<SeriesEntry>,
    pub aggregate: Vec<AggregatePoint>,
    pub environment: Environment,
}

pub fn write_metrics(path: &Path, records: &[MetricRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| CliError::format(path, e.to_string()))?;
        w.write_all(b"\n").map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRecord>> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| CliError::Data(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

fn read_stamp(log: &Path) -> Option<RunStamp> {
    let path = log.parent()?.join(RUN_FILE);
    serde_json::from_str(&fs::read_to_string(path).ok()?).ok()
}

fn column(series: &[SeriesEntry], i: usize, f: impl Fn(&MetricRecord) -> Option<f64>) -> Option<Stat> {
    let values: Option<Vec<f64>> = series.iter().map(|s| f(&s.records[i])).collect();
    values.and_then(|v| Stat::of(&v))
}

/// Aggregates logs that share one evaluation cadence. Logs whose step
/// sequences differ are rejected rather than resampled.
pub fn aggregate(series: &[SeriesEntry]) -> Result<Vec<AggregatePoint>> {
    let first = series.first().ok_or_else(|| CliError::Data("no metrics logs given".into()))?;
    let steps: Vec<usize> = first.records.iter().map(|r| r.step).collect();
    for s in &series[1..] {
        let other: Vec<usize> = s.records.iter().map(|r| r.step).collect();
        if other != steps {
            return Err(CliError::Data(format!(
                "evaluation cadence of {} ({:?}) differs from {} ({:?})",
                s.log, other, first.log, steps
            )));
        }
    }
    Ok(steps
        .iter()
        .enumerate()
        .map(|(i, &step)| AggregatePoint {
            step,
            teacher_target_acc: column(series, i, |r| r.teacher_target_acc),
            student_target_acc: column(series, i, |r| r.student_target_acc),
            student_source_acc: column(series, i, |r| r.student_source_acc),
            mean_q: column(series, i, |r| Some(r.mean_q)).expect("at least one series"),
        })
        .collect())
}

pub fn build_report(logs: &[PathBuf], config: Option<serde_json::Value>) -> Result<ExperimentReport> {
    if logs.is_empty() {
        return Err(CliError::Data("no metrics logs given".into()));
    }
    let mut series = Vec::new();
    let mut config = config;
    let mut deterministic = true;
    for log in logs {
        let records = read_metrics(log)?;
        if records.is_empty() {
            return Err(CliError::Data(format!("{}: empty metrics log", log.display())));
        }
        let stamp = read_stamp(log);
        if let Some(st) = &stamp {
            deterministic &= st.deterministic;
            if config.is_none() {
                config = Some(st.config.clone());
            }
        }
        series.push(SeriesEntry {
            log: log.display().to_string(),
            seed: stamp.map(|s| s.seed),
            records,
        });
    }
    let aggregate = aggregate(&series)?;
    Ok(ExperimentReport {
        config,
        environment: Environment {
            version: env!("CARGO_PKG_VERSION").into(),
            seeds: series.iter().filter_map(|s| s.seed).collect(),
            deterministic,
        },
        series,
        aggregate,
    })
}

/// Per-seed curves (thin, dashed for the teacher) plus mean and one-std
/// bands.
pub fn curves_svg(report: &ExperimentReport) -> String {
    let mut out = Vec::new();
    let pick: [(&str, fn(&MetricRecord) -> Option<f64>, fn(&AggregatePoint) -> Option<Stat>, bool); 2] = [
        ("teacher", |r| r.teacher_target_acc, |a| a.teacher_target_acc, true),
        ("student", |r| r.student_target_acc, |a| a.student_target_acc, false),
    ];
    for (k, (name, per_record, per_point, dashed)) in pick.iter().enumerate() {
        let mean: Vec<(f64, f64, f64)> = report
            .aggregate
            .iter()
            .filter_map(|a| per_point(a).map(|s| (a.step as f64, s.mean, s.std)))
            .collect();
        if mean.is_empty() {
            continue;
        }
        for (j, s) in report.series.iter().enumerate() {
            let label = match s.seed {
                Some(seed) => format!("{name} seed {seed}"),
                None => format!("{name} run {j}"),
            };
            out.push(Series {
                label,
                points: s.records.iter().filter_map(|r| per_record(r).map(|v| (r.step as f64, v))).collect(),
                band: None,
                color: svg::PALETTE[(2 + j) % svg::PALETTE.len()],
                dashed: *dashed,
            });
        }
        out.push(Series {
            label: format!("{name} mean ± std"),
            points: mean.iter().map(|m| (m.0, m.1)).collect(),
            band: Some(mean.iter().map(|m| m.2).collect()),
            color: svg::PALETTE[k],
            dashed: *dashed,
        });
    }
    svg::line_chart("Target accuracy", "step", "accuracy", &out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use clda_core::trainer::Stage;
    use std::collections::BTreeMap;

    fn rec(step: usize, t: f64, s: f64) -> MetricRecord {
        MetricRecord {
            step,
            teacher_target_acc: Some(t),
            student_target_acc: Some(s),
            student_source_acc: None,
            mean_q: 0.5,
            stage: Stage::Distill,
            gamma_set: vec![],
            i_star_map: BTreeMap::new(),
        }
    }

    fn entry(records: Vec<MetricRecord>) -> SeriesEntry {
        SeriesEntry {
            log: "x".into(),
            seed: None,
            records,
        }
    }

    #[test]
    fn two_seed_mean_by_hand() {
        let a = entry(vec![rec(10, 0.5, 0.25), rec(20, 0.75, 0.5)]);
        let b = entry(vec![rec(10, 0.25, 0.75), rec(20, 0.25, 1.0)]);
        let agg = aggregate(&[a, b]).unwrap();
        assert_eq!(agg[0].teacher_target_acc.unwrap().mean, (0.5 + 0.25) / 2.0);
        assert_eq!(agg[1].student_target_acc.unwrap().mean, (0.5 + 1.0) / 2.0);
        let sd = agg[1].teacher_target_acc.unwrap().std;
        assert!((sd - 0.5f64.sqrt() * 0.5).abs() < 1e-15);
        assert!(agg[0].student_source_acc.is_none());
    }

    #[test]
    fn single_log_is_identity() {
        let a = entry(vec![rec(10, 0.3, 0.6)]);
        let agg = aggregate(&[a]).unwrap();
        let t = agg[0].teacher_target_acc.unwrap();
        assert_eq!((t.mean, t.std, t.n), (0.3, 0.0, 1));
    }

    #[test]
    fn cadence_mismatch_is_an_error() {
        let a = entry(vec![rec(10, 0.5, 0.5), rec(20, 0.5, 0.5)]);
        let b = entry(vec![rec(10, 0.5, 0.5), rec(30, 0.5, 0.5)]);
        assert!(matches!(aggregate(&[a, b]), Err(CliError::Data(_))));
        assert!(aggregate(&[]).is_err());
    }
}
