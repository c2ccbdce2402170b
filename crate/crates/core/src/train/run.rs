use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::checkpoint::save_checkpoint;
use super::config::TrainConfig;
use super::metrics::write_metrics_csv;
use super::trainer::{TestReport, TrainData, Trainer};
use crate::data::{DatasetFile, MnistPools, Split};
use crate::error::{Error, Result};
use crate::verify::{audit_dataset_with, AuditReport};

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "last.ckpt";
pub const SUMMARY_FILE: &str = "summary.json";

/// Reads one split and audits it. A failed audit, or a file whose recorded
/// split differs from `expected`, is an error unless `allow_unaudited`.
pub fn load_split(
    path: &Path,
    expected: Split,
    allow_unaudited: bool,
    pools: Option<&MnistPools>,
) -> Result<(DatasetFile, AuditReport)> {
    let report = audit_dataset_with(path, pools)?;
    let ds = DatasetFile::read(path)?;
    let mut problems = Vec::new();
    if !report.passed {
        problems.push(report.summary());
    }
    if ds.meta.split != expected {
        problems.push(format!("file holds the {} split, used as {expected}", ds.meta.split));
    }
    if !problems.is_empty() && !allow_unaudited {
        return Err(Error::AuditFailed { path: path.to_path_buf(), summary: problems.join("; ") });
    }
    Ok((ds, report))
}

/// Loads the configured splits (train required) and applies sample limits.
pub fn load_train_data(cfg: &TrainConfig, pools: Option<&MnistPools>) -> Result<(TrainData, Vec<AuditReport>)> {
    let mut audits = Vec::new();
    let mut load = |p: &Option<PathBuf>, split| -> Result<Option<DatasetFile>> {
        match p {
            None => Ok(None),
            Some(p) => {
                let (ds, r) = load_split(p, split, cfg.allow_unaudited, pools)?;
                audits.push(r);
                Ok(Some(ds))
            }
        }
    };
    let train = load(&cfg.data.train, Split::Train)?.ok_or_else(|| Error::Config("data.train is required".into()))?;
    let val = load(&cfg.data.val, Split::Val)?;
    let test = load(&cfg.data.test, Split::Test)?;
    Ok((TrainData { train, val, test }.limited(cfg), audits))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub model: String,
    pub params: usize,
    pub epochs_run: usize,
    pub best_epoch: Option<usize>,
    pub best_val_error: Option<f64>,
    pub best_val_loss: Option<f64>,
    pub test: Option<TestReport>,
}

/// Trains to completion inside `dir`, rewriting the metrics and the
/// resumable checkpoint after every epoch, then scores the test split.
/// `progress` sees the trainer after each epoch.
pub fn run_in_dir(
    trainer: &mut Trainer,
    data: &TrainData,
    dir: &Path,
    mut progress: impl FnMut(&Trainer),
) -> Result<RunSummary> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    trainer.fit(data, |t| {
        progress(t);
        write_metrics_csv(&dir.join(METRICS_FILE), &t.history)?;
        save_checkpoint(t, &dir.join(CHECKPOINT_FILE))
    })?;
    write_metrics_csv(&dir.join(METRICS_FILE), &trainer.history)?;
    let summary = RunSummary {
        model: trainer.cfg.model.label(),
        params: trainer.model.num_params(),
        epochs_run: trainer.next_epoch,
        best_epoch: trainer.best.as_ref().map(|b| b.epoch),
        best_val_error: trainer.best.as_ref().map(|b| b.val_error),
        best_val_loss: trainer.best.as_ref().map(|b| b.val_loss),
        test: trainer.test_report(data)?,
    };
    let path = dir.join(SUMMARY_FILE);
    std::fs::write(&path, serde_json::to_string_pretty(&summary)?)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(summary)
}
