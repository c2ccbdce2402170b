use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Split;
use crate::error::{Error, Result};

pub const METRICS_HEADER: &str = "epoch,split,loss,error,lr,seconds";

/// One row of the metrics log: mean NLL and error rate of one split after
/// (val/test) or during (train) an epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub split: Split,
    pub loss: f64,
    pub error: f64,
    pub lr: f64,
    pub seconds: f64,
}

impl EpochMetrics {
    pub fn csv_row(&self) -> String {
        format!("{},{},{},{},{},{}", self.epoch, self.split, self.loss, self.error, self.lr, self.seconds)
    }
}

pub fn metrics_csv(rows: &[EpochMetrics]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

pub fn write_metrics_csv(path: &Path, rows: &[EpochMetrics]) -> Result<()> {
    std::fs::write(path, metrics_csv(rows)).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<EpochMetrics>> {
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::Config(format!("metrics CSV must start with {METRICS_HEADER:?}")));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || Error::Config(format!("metrics CSV line {}: {line:?}", i + 2));
            if f.len() != 6 {
                return Err(bad());
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
            Ok(EpochMetrics {
                epoch: f[0].parse().map_err(|_| bad())?,
                split: f[1].parse().map_err(|_| bad())?,
                loss: num(f[2])?,
                error: num(f[3])?,
                lr: num(f[4])?,
                seconds: num(f[5])?,
            })
        })
        .collect()
}

/// Wide per-epoch curves: `epoch,lr,train_loss,train_error,val_loss,val_error`
/// (empty cells where a split is absent).
pub fn curves_csv(rows: &[EpochMetrics]) -> String {
    let epochs: std::collections::BTreeSet<usize> = rows.iter().map(|r| r.epoch).collect();
    let mut out = String::from("epoch,lr,train_loss,train_error,val_loss,val_error\n");
    for e in epochs {
        let find = |s: Split| rows.iter().find(|r| r.epoch == e && r.split == s);
        let lr = rows.iter().find(|r| r.epoch == e).map(|r| r.lr).unwrap_or(f64::NAN);
        let cell =
            |m: Option<&EpochMetrics>, f: fn(&EpochMetrics) -> f64| m.map(|m| f(m).to_string()).unwrap_or_default();
        let (t, v) = (find(Split::Train), find(Split::Val));
        let _ = writeln!(
            out,
            "{e},{lr},{},{},{},{}",
            cell(t, |m| m.loss),
            cell(t, |m| m.error),
            cell(v, |m| m.loss),
            cell(v, |m| m.error)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows() -> Vec<EpochMetrics> {
        vec![
            EpochMetrics {
                epoch: 0,
                split: Split::Train,
                loss: std::f64::consts::LN_2,
                error: 0.5,
                lr: 0.1,
                seconds: 0.0,
            },
            EpochMetrics { epoch: 0, split: Split::Val, loss: 0.7, error: 0.46875, lr: 0.1, seconds: 1.25 },
            EpochMetrics { epoch: 1, split: Split::Train, loss: 0.5, error: 0.25, lr: 0.01, seconds: 0.0 },
        ]
    }

    #[test]
    fn csv_round_trip_is_lossless() {
        let text = metrics_csv(&rows());
        assert!(text.starts_with("epoch,split,loss,error,lr,seconds\n0,train,0.6931471805599453,0.5,0.1,0\n"));
        assert!(!text.contains('\r'));
        assert_eq!(parse_metrics_csv(&text).unwrap(), rows());
    }

    #[test]
    fn curves_are_wide() {
        let c = curves_csv(&rows());
        let lines: Vec<&str> = c.lines().collect();
        assert_eq!(lines[1], "0,0.1,0.6931471805599453,0.5,0.7,0.46875");
        assert_eq!(lines[2], "1,0.01,0.5,0.25,,");
    }

    #[test]
    fn malformed_rows_rejected() {
        assert!(parse_metrics_csv("nope\n").is_err());
        assert!(parse_metrics_csv(&format!("{METRICS_HEADER}\n0,dev,1,1,1,1\n")).is_err());
    }
}
