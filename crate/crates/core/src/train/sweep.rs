use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::run::run_in_dir;
use super::trainer::{TrainData, Trainer};
use crate::error::{Error, Result};
use crate::nn::count_params;

/// Mean of `xs` (0 when empty).
pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Sample standard deviation (divisor n − 1); 0 for fewer than two values.
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub learning_rate: f64,
    pub seed: u64,
    pub best_epoch: Option<usize>,
    pub best_test_error: Option<f64>,
    pub final_test_error: Option<f64>,
    /// Present when the cell aborted; such cells are left out of every aggregate.
    pub failure: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSummary {
    pub learning_rate: f64,
    pub seeds: Vec<u64>,
    /// Per-seed test error of the best-validation checkpoint.
    pub best_test_errors: Vec<f64>,
    pub best_mean: f64,
    pub best_std: f64,
    /// Per-seed test error after the last epoch.
    pub final_test_errors: Vec<f64>,
    pub final_mean: f64,
    pub final_std: f64,
    pub failed_seeds: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub model: String,
    pub params: usize,
    pub per_lr: Vec<LrSummary>,
    /// Lowest mean best-checkpoint test error; earlier grid entry on ties.
    pub chosen_lr: Option<f64>,
    pub cells: Vec<CellResult>,
}

impl SweepSummary {
    pub fn chosen(&self) -> Option<&LrSummary> {
        self.per_lr.iter().find(|s| Some(s.learning_rate) == self.chosen_lr)
    }

    /// `model | params | mean ± std` with errors in percent.
    pub fn table_row(&self) -> String {
        let err = match self.chosen() {
            Some(s) => format!("{:.2}% ± {:.2}%", 100.0 * s.best_mean, 100.0 * s.best_std),
            None => "n/a".into(),
        };
        format!("{} | {} | {}", self.model, group_thousands(self.params), err)
    }

    pub fn any_failed(&self) -> bool {
        self.cells.iter().any(|c| c.failure.is_some())
    }
}

pub fn group_thousands(n: usize) -> String {
    let s = n.to_string();
    let mut out = String::new();
    for (i, ch) in s.chars().enumerate() {
        if i > 0 && (s.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

/// Aggregates cells in the order of `lrs`.
pub fn summarize(model: String, params: usize, lrs: &[f64], cells: Vec<CellResult>) -> SweepSummary {
    let per_lr: Vec<LrSummary> = lrs
        .iter()
        .map(|&lr| {
            let mine: Vec<&CellResult> = cells.iter().filter(|c| c.learning_rate == lr).collect();
            let ok: Vec<&&CellResult> = mine.iter().filter(|c| c.failure.is_none()).collect();
            let best: Vec<f64> = ok.iter().filter_map(|c| c.best_test_error).collect();
            let fin: Vec<f64> = ok.iter().filter_map(|c| c.final_test_error).collect();
            LrSummary {
                learning_rate: lr,
                seeds: ok.iter().map(|c| c.seed).collect(),
                best_mean: mean(&best),
                best_std: sample_std(&best),
                final_mean: mean(&fin),
                final_std: sample_std(&fin),
                best_test_errors: best,
                final_test_errors: fin,
                failed_seeds: mine.iter().filter(|c| c.failure.is_some()).map(|c| c.seed).collect(),
            }
        })
        .collect();
    let chosen_lr = per_lr
        .iter()
        .filter(|s| !s.best_test_errors.is_empty())
        .fold(None::<&LrSummary>, |acc, s| match acc {
            Some(a) if a.best_mean <= s.best_mean => Some(a),
            _ => Some(s),
        })
        .map(|s| s.learning_rate);
    SweepSummary { model, params, per_lr, chosen_lr, cells }
}

/// Trains every (learning rate, seed) cell of the grid on the shared data.
/// Cells run in parallel on a pool of `threads` workers (each cell is
/// single-threaded, so results do not depend on the pool size). With
/// `out_dir`, each cell writes its run files to `lr{lr}_seed{seed}/`.
pub fn sweep(
    template: &TrainConfig,
    lrs: &[f64],
    seeds: &[u64],
    data: &TrainData,
    threads: usize,
    out_dir: Option<&Path>,
) -> Result<SweepSummary> {
    if lrs.is_empty() || seeds.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    if data.test.is_none() {
        return Err(Error::Config("sweep needs a test split".into()));
    }
    let grid: Vec<(f64, u64)> = lrs.iter().flat_map(|&lr| seeds.iter().map(move |&s| (lr, s))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let cells: Vec<CellResult> = pool.install(|| {
        grid.par_iter()
            .map(|&(lr, seed)| {
                let cfg = TrainConfig { learning_rate: lr, seed, ..template.clone() };
                let outcome = (|| -> Result<_> {
                    let mut t = Trainer::new(cfg)?;
                    match out_dir {
                        Some(d) => {
                            let s = run_in_dir(&mut t, data, &d.join(format!("lr{lr}_seed{seed}")), |_| ())?;
                            Ok((s.best_epoch, s.test))
                        }
                        None => {
                            t.fit(data, |_| Ok(()))?;
                            Ok((t.best.as_ref().map(|b| b.epoch), t.test_report(data)?))
                        }
                    }
                })();
                match outcome {
                    Ok((best_epoch, test)) => CellResult {
                        learning_rate: lr,
                        seed,
                        best_epoch,
                        best_test_error: test.as_ref().map(|t| t.best_error),
                        final_test_error: test.as_ref().map(|t| t.final_error),
                        failure: None,
                    },
                    Err(e) => CellResult {
                        learning_rate: lr,
                        seed,
                        best_epoch: None,
                        best_test_error: None,
                        final_test_error: None,
                        failure: Some(e.to_string()),
                    },
                }
            })
            .collect()
    });
    Ok(summarize(template.model.label(), count_params(&template.model)?.total, lrs, cells))
}

#[cfg(test)]
mod tests {
    use super::super::trainer::tests::{tiny_cfg, tiny_data};
    use super::*;

    fn cell(lr: f64, seed: u64, err: f64) -> CellResult {
        CellResult {
            learning_rate: lr,
            seed,
            best_epoch: Some(0),
            best_test_error: Some(err),
            final_test_error: Some(err),
            failure: None,
        }
    }

    #[test]
    fn aggregation_uses_sample_std() {
        let s = summarize("m".into(), 1, &[0.1], vec![cell(0.1, 0, 0.1), cell(0.1, 1, 0.2), cell(0.1, 2, 0.3)]);
        let l = &s.per_lr[0];
        assert!((l.best_mean - 0.2).abs() < 1e-12);
        assert!((l.best_std - 0.1).abs() < 1e-12);
        // Independent population-std oracle: sqrt(((0.1)^2 + 0 + (0.1)^2) / 3).
        let population = (0.02f64 / 3.0).sqrt();
        assert!((population - 0.08165).abs() < 1e-5);
        assert!((l.best_std - population).abs() > 0.01);
    }

    #[test]
    fn single_cell_has_zero_std_and_failures_are_excluded() {
        let mut bad = cell(0.05, 1, 0.0);
        bad.failure = Some("non-finite loss".into());
        bad.best_test_error = None;
        let s = summarize("m".into(), 1, &[0.1, 0.05], vec![cell(0.1, 0, 0.3), cell(0.05, 0, 0.2), bad]);
        assert_eq!(s.per_lr[0].best_std, 0.0);
        assert_eq!(s.per_lr[1].failed_seeds, vec![1]);
        assert_eq!(s.per_lr[1].best_test_errors, vec![0.2]);
        assert_eq!(s.chosen_lr, Some(0.05));
        assert!(s.any_failed());
    }

    #[test]
    fn table_row_format() {
        let s = summarize("ResMixNet(4,1)".into(), 191002, &[0.01], vec![cell(0.01, 0, 0.1), cell(0.01, 1, 0.2)]);
        assert_eq!(s.table_row(), "ResMixNet(4,1) | 191,002 | 15.00% ± 7.07%");
        assert_eq!(group_thousands(1047458), "1,047,458");
        assert_eq!(group_thousands(999), "999");
    }

    #[test]
    fn grid_runs_and_is_pool_size_independent() {
        let data = tiny_data(12);
        let cfg = TrainConfig { epochs: 1, lr_milestones: vec![], ..tiny_cfg() };
        let a = sweep(&cfg, &[0.05, 0.01], &[0, 1], &data, 1, None).unwrap();
        let b = sweep(&cfg, &[0.05, 0.01], &[0, 1], &data, 3, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.cells.len(), 4);
        assert!(a.chosen_lr.is_some());
        assert!(sweep(&cfg, &[], &[0], &data, 1, None).is_err());
    }
}
