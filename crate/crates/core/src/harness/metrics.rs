//! Accuracy helpers and the files a run writes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Whether `label` ranks among the top `k` logits of `row`. Ties are broken
/// by class index, as a stable descending sort would order them.
pub fn in_top_k<T: Scalar>(row: &[T], label: usize, k: usize) -> bool {
    let target = row[label];
    let ahead = row
        .iter()
        .enumerate()
        .filter(|&(j, &v)| v > target || (v == target && j < label))
        .count();
    ahead < k
}

/// Number of rows whose label is within the top `k`.
pub fn count_top_k<T: Scalar>(logits: &Tensor<T>, labels: &[usize], k: usize) -> Result<usize> {
    let (n, classes) = logits.dims2()?;
    if labels.len() != n {
        return Err(Error::mismatch("top-k", format!("{n} rows but {} labels", labels.len())));
    }
    let mut hits = 0;
    for (row, &label) in logits.data().chunks_exact(classes).zip(labels) {
        if label >= classes {
            return Err(Error::InvalidLabel { label, classes });
        }
        hits += in_top_k(row, label, k) as usize;
    }
    Ok(hits)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub loss: f64,
    pub top1: f64,
    pub top5: f64,
    pub samples: usize,
}

/// One line of metrics.csv. Accuracies are percentages.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_loss: f64,
    pub test_top1: f64,
    pub test_top5: f64,
    pub lr: f64,
    pub wall_seconds: f64,
}

pub const CSV_HEADER: &str = "epoch,train_loss,train_acc,test_loss,test_top1,test_top5,lr,wall_seconds";

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{:.3}",
            self.epoch,
            self.train_loss,
            self.train_acc,
            self.test_loss,
            self.test_top1,
            self.test_top5,
            self.lr,
            self.wall_seconds
        )
    }

    pub fn from_csv(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim_end().split(',').collect();
        if f.len() != 8 {
            return Err(Error::InvalidConfig(format!("metrics row has {} fields: {line:?}", f.len())));
        }
        let num = |i: usize| -> Result<f64> {
            f[i].parse()
                .map_err(|_| Error::InvalidConfig(format!("bad number {:?} in metrics row", f[i])))
        };
        Ok(MetricsRow {
            epoch: f[0]
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad epoch {:?}", f[0])))?,
            train_loss: num(1)?,
            train_acc: num(2)?,
            test_loss: num(3)?,
            test_top1: num(4)?,
            test_top5: num(5)?,
            lr: num(6)?,
            wall_seconds: num(7)?,
        })
    }
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{}", r.to_csv());
    }
    s
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    fs::write(path, metrics_csv(rows))?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::InvalidConfig(format!("{} has an unexpected header", path.display())));
    }
    lines.map(MetricsRow::from_csv).collect()
}

/// Contents of summary.json.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub arch: String,
    pub variant: String,
    pub dataset: String,
    pub param_count: usize,
    pub attention_params: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    pub final_metrics: MetricsRow,
    pub best_test_top1: f64,
    pub best_epoch: usize,
    pub total_seconds: f64,
    /// Every config key; parsing these back reproduces the run.
    pub config: std::collections::BTreeMap<String, String>,
}

impl Summary {
    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}
