//! Metrics CSV and run summaries.
//!
//! ```text
//! # mcnet-metrics v1
//! epoch,split,loss,accuracy,lr,seconds
//! 1,train,2.1,0.31,0.001,0
//! 1,test,1.9,0.35,0.001,0
//! ```

use std::io::Write;
use std::path::Path;

use mcnet::train::EpochMetrics;

use crate::error::{CliError, Result};

pub const CSV_VERSION_LINE: &str = "# mcnet-metrics v1";
pub const CSV_HEADER: [&str; 6] = ["epoch", "split", "loss", "accuracy", "lr", "seconds"];

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub accuracy: f64,
    pub lr: f64,
    pub seconds: f64,
}

/// One `train` row per epoch, followed by a `test` row when evaluated.
pub fn rows(history: &[EpochMetrics]) -> Vec<MetricRow> {
    let mut out = Vec::new();
    for m in history {
        out.push(MetricRow {
            epoch: m.epoch,
            split: "train".into(),
            loss: m.train_loss,
            accuracy: m.train_accuracy,
            lr: m.lr,
            seconds: m.seconds,
        });
        if let (Some(loss), Some(accuracy)) = (m.test_loss, m.test_accuracy) {
            out.push(MetricRow {
                epoch: m.epoch,
                split: "test".into(),
                loss,
                accuracy,
                lr: m.lr,
                seconds: m.seconds,
            });
        }
    }
    out
}

pub fn to_csv(rows: &[MetricRow]) -> Vec<u8> {
    let mut buf = Vec::new();
    writeln!(buf, "{CSV_VERSION_LINE}").expect("vec write");
    let mut w = csv::Writer::from_writer(buf);
    w.write_record(CSV_HEADER).expect("vec write");
    for r in rows {
        w.write_record([
            r.epoch.to_string(),
            r.split.clone(),
            r.loss.to_string(),
            r.accuracy.to_string(),
            r.lr.to_string(),
            r.seconds.to_string(),
        ])
        .expect("vec write");
    }
    w.into_inner().expect("vec flush")
}

pub fn write_csv(path: &Path, rows: &[MetricRow]) -> Result<()> {
    std::fs::write(path, to_csv(rows)).map_err(CliError::io(path))
}

/// Parses a metrics CSV. Errors carry the 1-based line number.
pub fn parse_csv(path: &Path, text: &str) -> Result<Vec<MetricRow>> {
    let err = |line: u64, message: String| CliError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines();
    match lines.next() {
        Some(first) if first.trim() == CSV_VERSION_LINE => {}
        Some(first) => {
            return Err(err(1, format!("expected `{CSV_VERSION_LINE}`, found `{first}`")))
        }
        None => return Err(err(1, "empty file".into())),
    }
    let body = text.split_once('\n').map_or("", |(_, rest)| rest);
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(body.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| err(2, e.to_string()))?
        .clone();
    if header.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(err(2, format!("expected header `{}`", CSV_HEADER.join(","))));
    }
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() + 1);
            err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() + 1);
        let num = |i: usize| -> Result<f64> {
            rec[i]
                .trim()
                .parse::<f64>()
                .map_err(|_| err(line, format!("column `{}` is not a number: `{}`", CSV_HEADER[i], &rec[i])))
        };
        let epoch = rec[0]
            .trim()
            .parse::<usize>()
            .map_err(|_| err(line, format!("epoch is not an integer: `{}`", &rec[0])))?;
        let split = rec[1].trim().to_string();
        if split != "train" && split != "test" {
            return Err(err(line, format!("unknown split `{split}`")));
        }
        out.push(MetricRow {
            epoch,
            split,
            loss: num(2)?,
            accuracy: num(3)?,
            lr: num(4)?,
            seconds: num(5)?,
        });
    }
    if out.is_empty() {
        return Err(err(2, "no metric rows".into()));
    }
    Ok(out)
}

/// Mean and half of the max-min spread.
pub fn mean_half_range(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Some((mean, (hi - lo) / 2.0))
}

/// `0.9505±0.0013`.
pub fn format_mean_range(mean: f64, half: f64) -> String {
    format!("{mean:.4}±{half:.4}")
}
