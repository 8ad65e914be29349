//! Run outputs: `metrics.csv`, `summary.json` and commitment dumps.

use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{RunConfig, RunReport};
use crate::{Error, Result};

/// Per-worker FedCom columns of one metrics row.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WorkerMetrics {
    pub dc: f64,
    pub tc: f64,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub round: usize,
    pub benign_acc: f64,
    pub poison_acc: Option<f64>,
    pub workers: Vec<WorkerMetrics>,
}

fn header(workers: usize) -> Vec<String> {
    let mut h = vec!["round".to_string(), "benign_acc".into(), "poison_acc".into()];
    for w in 0..workers {
        h.extend([format!("w{w}_dc"), format!("w{w}_tc"), format!("w{w}_weight")]);
    }
    h
}

/// Write one row per round. Floats carry 6 decimals; a missing poison
/// accuracy is an empty field.
pub fn emit_csv(report: &RunReport, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    let workers = report.rounds.first().and_then(|r| r.credits.as_ref()).map_or(0, |c| c.dc.len());
    writeln!(out, "{}", header(workers).join(","))?;
    for r in &report.rounds {
        let mut fields = vec![
            r.round.to_string(),
            format!("{:.6}", r.benign_accuracy),
            r.poison_accuracy.map(|p| format!("{p:.6}")).unwrap_or_default(),
        ];
        if let Some(c) = &r.credits {
            for w in 0..c.dc.len() {
                fields.extend([format!("{:.6}", c.dc[w]), format!("{:.6}", c.tc[w]), format!("{:.6}", c.weight[w])]);
            }
        }
        writeln!(out, "{}", fields.join(","))?;
    }
    out.flush()?;
    Ok(())
}

fn parse_field(record: &csv::StringRecord, row: usize, col: usize, names: &csv::StringRecord) -> Result<f64> {
    let raw = record.get(col).unwrap_or("");
    raw.trim().parse::<f64>().map_err(|e| Error::Parse {
        row,
        column: names.get(col).unwrap_or("?").to_string(),
        message: format!("`{raw}`: {e}"),
    })
}

/// Parse a metrics CSV written by [`emit_csv`].
pub fn read_metrics_from<R: Read>(reader: R) -> Result<Vec<MetricsRow>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let names = rdr.headers()?.clone();
    let width = names.len();
    if width < 3 || (width - 3) % 3 != 0 {
        return Err(Error::Parse { row: 0, column: "header".into(), message: format!("unexpected column count {width}") });
    }
    let expected = header((width - 3) / 3);
    if let Some((i, _)) = names.iter().zip(&expected).enumerate().find(|(_, (a, b))| a != b) {
        return Err(Error::Parse { row: 0, column: names[i].to_string(), message: format!("expected `{}`", expected[i]) });
    }
    let mut rows = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let row = i + 1;
        if record.len() != width {
            return Err(Error::Parse {
                row,
                column: "*".into(),
                message: format!("expected {width} fields, found {}", record.len()),
            });
        }
        let round = record[0].trim().parse::<usize>().map_err(|e| Error::Parse {
            row,
            column: "round".into(),
            message: format!("`{}`: {e}", &record[0]),
        })?;
        let benign_acc = parse_field(&record, row, 1, &names)?;
        let poison_acc = if record[2].trim().is_empty() { None } else { Some(parse_field(&record, row, 2, &names)?) };
        let workers = (3..width)
            .step_by(3)
            .map(|c| {
                Ok(WorkerMetrics {
                    dc: parse_field(&record, row, c, &names)?,
                    tc: parse_field(&record, row, c + 1, &names)?,
                    weight: parse_field(&record, row, c + 2, &names)?,
                })
            })
            .collect::<Result<_>>()?;
        rows.push(MetricsRow { round, benign_acc, poison_acc, workers });
    }
    Ok(rows)
}

pub fn read_metrics_csv(path: impl AsRef<Path>) -> Result<Vec<MetricsRow>> {
    read_metrics_from(File::open(path)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalCredits {
    pub dc: Vec<f64>,
    pub tc: Vec<f64>,
    pub score: Vec<f64>,
    pub flag: Vec<bool>,
    pub weight: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config: RunConfig,
    pub rounds: usize,
    pub byzantine_workers: Vec<usize>,
    pub sample_sizes: Vec<usize>,
    pub final_benign_acc: f64,
    pub best_benign_acc: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_poison_acc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_poison_acc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_divergence: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_credits: Option<FinalCredits>,
    pub total_wall_time_s: f64,
}

impl Summary {
    pub fn of(report: &RunReport) -> Self {
        let poison: Vec<f64> = report.rounds.iter().filter_map(|r| r.poison_accuracy).collect();
        Summary {
            config: report.config.clone(),
            rounds: report.rounds.len(),
            byzantine_workers: report.byzantine.clone(),
            sample_sizes: report.sample_sizes.clone(),
            final_benign_acc: report.final_benign_accuracy(),
            best_benign_acc: report.rounds.iter().map(|r| r.benign_accuracy).fold(0.0, f64::max),
            final_poison_acc: report.final_poison_accuracy(),
            max_poison_acc: (!poison.is_empty()).then(|| poison.iter().copied().fold(0.0, f64::max)),
            data_divergence: report.divergence.as_ref().map(|d| d.d.clone()),
            final_credits: report.rounds.last().and_then(|r| r.credits.as_ref()).map(|c| FinalCredits {
                dc: c.dc.clone(),
                tc: c.tc.clone(),
                score: c.score.clone(),
                flag: c.flag.clone(),
                weight: c.weight.clone(),
            }),
            total_wall_time_s: report.total_wall_time,
        }
    }
}

pub fn emit_summary_json(report: &RunReport, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, &Summary::of(report))?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

/// Write `metrics.csv`, `summary.json` and, when the run kept them, one
/// `commitments/worker_<i>.csv` per worker.
pub fn write_outputs(report: &RunReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    emit_csv(report, dir.join("metrics.csv"))?;
    emit_summary_json(report, dir.join("summary.json"))?;
    if report.config.dump_commitments {
        if let Some(commitments) = &report.commitments {
            let cdir = dir.join("commitments");
            fs::create_dir_all(&cdir)?;
            for (w, c) in commitments.iter().enumerate() {
                c.data.save_csv(cdir.join(format!("worker_{w}.csv")))?;
            }
        }
    }
    Ok(())
}
