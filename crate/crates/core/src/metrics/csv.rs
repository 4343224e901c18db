//! Plain CSV for metric records. Ids never contain commas, so no quoting is needed.

use std::fs;
use std::path::Path;

use super::MetricRecord;
use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "metric_id,method_id,sample_id,class_index,raw_score,oriented_score,status";

fn cell(v: Option<f64>) -> String {
    v.map(|v| format!("{v:?}")).unwrap_or_default()
}

pub fn records_to_csv(records: &[MetricRecord]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.metric_id,
            r.method_id,
            r.sample_id,
            r.class_index,
            cell(r.raw_score),
            cell(r.oriented_score),
            r.status
        ));
    }
    out
}

pub fn write_records(records: &[MetricRecord], path: &Path) -> Result<()> {
    for r in records {
        if [&r.metric_id, &r.method_id, &r.status].iter().any(|s| s.contains([',', '\n'])) {
            return Err(Error::InvalidArgument(format!("id '{}' cannot be written to CSV", r.metric_id)));
        }
    }
    fs::write(path, records_to_csv(records))?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<MetricRecord>> {
    let text = fs::read_to_string(path)?;
    let corrupt = |line: usize, reason: &str| Error::CorruptManifest {
        path: path.to_path_buf(),
        reason: format!("line {line}: {reason}"),
    };
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(corrupt(1, "unexpected header"));
    }
    let opt = |s: &str, line: usize| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(|_| corrupt(line, "bad number"))
        }
    };
    lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            let line = i + 2;
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 7 {
                return Err(corrupt(line, "expected 7 fields"));
            }
            Ok(MetricRecord {
                metric_id: f[0].to_string(),
                method_id: f[1].to_string(),
                sample_id: f[2].parse().map_err(|_| corrupt(line, "bad sample id"))?,
                class_index: f[3].parse().map_err(|_| corrupt(line, "bad class index"))?,
                raw_score: opt(f[4], line)?,
                oriented_score: opt(f[5], line)?,
                status: f[6].to_string(),
            })
        })
        .collect()
}
