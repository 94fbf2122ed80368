//! Run metrics: append-only records, one per evaluation point per split,
//! written as line-delimited JSON with a fixed key set.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricsRecord {
    pub step: u64,
    pub split: String,
    pub loss: f64,
    pub ter: Option<f64>,
    pub wer: Option<f64>,
    pub sparsity: f64,
    pub alpha: f64,
}

/// In-memory metrics log plus an optional JSONL sink.
pub struct MetricsLog {
    records: Vec<MetricsRecord>,
    sink: Option<File>,
}

impl MetricsLog {
    pub fn in_memory() -> Self {
        MetricsLog {
            records: Vec::new(),
            sink: None,
        }
    }

    pub fn with_file(path: &Path) -> Result<Self> {
        Ok(MetricsLog {
            records: Vec::new(),
            sink: Some(File::create(path)?),
        })
    }

    pub fn append(&mut self, record: MetricsRecord) -> Result<()> {
        if let Some(f) = &mut self.sink {
            let line = serde_json::to_string(&record)
                .map_err(|e| Error::data(format!("serialize metrics: {e}")))?;
            writeln!(f, "{line}")?;
        }
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[MetricsRecord] {
        &self.records
    }

    pub fn flush(&mut self) -> Result<()> {
        if let Some(f) = &mut self.sink {
            f.flush()?;
        }
        Ok(())
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let file = File::open(path)?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::data(format!("parse metrics line: {e}")))?,
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip_with_fixed_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.jsonl");
        let mut log = MetricsLog::with_file(&path).unwrap();
        log.append(MetricsRecord {
            step: 20,
            split: "train".into(),
            loss: 3.5,
            ter: None,
            wer: None,
            sparsity: 0.0,
            alpha: 0.01,
        })
        .unwrap();
        log.append(MetricsRecord {
            step: 20,
            split: "valid".into(),
            loss: 3.9,
            ter: Some(0.4),
            wer: Some(0.4),
            sparsity: 0.0,
            alpha: 0.01,
        })
        .unwrap();
        log.flush().unwrap();

        let text = std::fs::read_to_string(&path).unwrap();
        for line in text.lines() {
            for key in ["step", "split", "loss", "ter", "wer", "sparsity", "alpha"] {
                assert!(line.contains(&format!("\"{key}\"")), "{key} missing in {line}");
            }
        }
        let back = read_metrics(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back, log.records());
    }
}
