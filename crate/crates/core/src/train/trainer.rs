use std::time::Instant;

use rand::seq::SliceRandom;
use serde::Serialize;

use super::config::TrainConfig;
use super::metrics::EpochMetrics;
use crate::data::{DatasetFile, Split};
use crate::error::{Error, Result};
use crate::nn::Model;
use crate::rng::stream;
use crate::tensor::{sgd_step, Mode, OptimizerConfig, ParamSet, Tensor};

/// Training, validation and optional test sets for one run.
#[derive(Clone, Debug)]
pub struct TrainData {
    pub train: DatasetFile,
    pub val: Option<DatasetFile>,
    pub test: Option<DatasetFile>,
}

impl TrainData {
    /// Applies the configured sample limits (prefixes of each split).
    pub fn limited(mut self, cfg: &TrainConfig) -> Self {
        if let Some(n) = cfg.train_limit {
            self.train = self.train.head(n);
        }
        if let (Some(n), Some(v)) = (cfg.val_limit, self.val.as_ref()) {
            self.val = Some(v.head(n));
        }
        if let (Some(n), Some(t)) = (cfg.test_limit, self.test.as_ref()) {
            self.test = Some(t.head(n));
        }
        self
    }
}

/// Converts samples to an N×C×H×W batch scaled to [0, 1].
pub fn batch_tensor(ds: &DatasetFile, indices: &[usize]) -> Tensor<f32> {
    let per = ds.image_len();
    let mut data = Vec::with_capacity(indices.len() * per);
    for &i in indices {
        data.extend(ds.image(i).iter().map(|&v| v as f32 / 255.0));
    }
    let [c, h, w] = ds.dims;
    Tensor::new(&[indices.len(), c, h, w], data).expect("batch shape matches")
}

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// `logsumexp(row) − row[label]` in f64.
fn nll(row: &[f32], label: usize) -> f64 {
    let m = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
    let lse = m + row.iter().map(|&v| (v as f64 - m).exp()).sum::<f64>().ln();
    lse - row[label] as f64
}

/// Gate probabilities of one mixture module, `samples × experts` row-major.
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct GateExport {
    pub module: String,
    pub experts: usize,
    pub values: Vec<f32>,
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct Evaluation {
    pub samples: usize,
    pub loss: f64,
    pub error: f64,
    pub predictions: Vec<u8>,
    pub gates: Vec<GateExport>,
}

fn check_dims(model: &Model<f32>, ds: &DatasetFile) -> Result<()> {
    if ds.dims[0] != model.config.input_channels() {
        return Err(Error::Config(format!(
            "dataset has {} channels but {} expects {}",
            ds.dims[0],
            model.config.label(),
            model.config.input_channels()
        )));
    }
    if let Some(&bad) = ds.labels.iter().find(|&&l| l as usize >= model.config.num_classes()) {
        return Err(Error::Config(format!("label {bad} outside the model's {} classes", model.config.num_classes())));
    }
    Ok(())
}

/// Eval-mode pass over a whole dataset.
pub fn evaluate(model: &mut Model<f32>, ds: &DatasetFile, batch_size: usize) -> Result<Evaluation> {
    check_dims(model, ds)?;
    let n = ds.len();
    let mut total = 0.0f64;
    let mut wrong = 0usize;
    let mut predictions = Vec::with_capacity(n);
    let mut gates: Vec<GateExport> = Vec::new();
    let order: Vec<usize> = (0..n).collect();
    for chunk in order.chunks(batch_size.max(1)) {
        let pass = model.forward(batch_tensor(ds, chunk), Mode::Eval)?;
        let logits = pass.logits();
        let k = logits.shape()[1];
        for (row, &i) in logits.data().chunks(k).zip(chunk) {
            let label = ds.labels[i] as usize;
            total += nll(row, label);
            let p = argmax(row);
            wrong += (p != label) as usize;
            predictions.push(p as u8);
        }
        for (module, g) in pass.gate_values() {
            let e = g.shape()[1];
            match gates.iter_mut().find(|x| x.module == module) {
                Some(x) => x.values.extend_from_slice(g.data()),
                None => gates.push(GateExport { module, experts: e, values: g.data().to_vec() }),
            }
        }
    }
    let denom = n.max(1) as f64;
    Ok(Evaluation { samples: n, loss: total / denom, error: wrong as f64 / denom, predictions, gates })
}

/// Model state at the epoch with the best validation result.
#[derive(Clone, Debug)]
pub struct BestState {
    pub epoch: usize,
    pub val_error: f64,
    pub val_loss: f64,
    pub params: ParamSet<f32>,
}

impl BestState {
    /// Lower error wins, then lower loss; on a full tie the earlier epoch stays.
    pub fn improved_by(&self, val_error: f64, val_loss: f64) -> bool {
        val_error < self.val_error || (val_error == self.val_error && val_loss < self.val_loss)
    }
}

/// Resumable single-run training state.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub cfg: TrainConfig,
    pub model: Model<f32>,
    /// First epoch not yet run.
    pub next_epoch: usize,
    pub history: Vec<EpochMetrics>,
    pub best: Option<BestState>,
}

impl Trainer {
    /// Builds the model from `cfg.seed` (initialization draws come first and
    /// from their own stream).
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let model = Model::build(&cfg.model, cfg.seed)?;
        Ok(Trainer { cfg, model, next_epoch: 0, history: Vec::new(), best: None })
    }

    pub fn is_finished(&self) -> bool {
        self.next_epoch >= self.cfg.epochs
    }

    /// Sample order of `epoch`.
    pub fn epoch_order(&self, epoch: usize, n: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut stream(self.cfg.seed, "shuffle", epoch as u64));
        order
    }

    /// One SGD step on `indices` in train mode. Returns the batch mean loss
    /// (measured before the update) and the number of misclassified samples.
    pub fn train_batch(&mut self, ds: &DatasetFile, indices: &[usize], opt: &OptimizerConfig) -> Result<(f64, usize)> {
        let labels: Vec<usize> = indices.iter().map(|&i| ds.labels[i] as usize).collect();
        let pass = self.model.forward(batch_tensor(ds, indices), Mode::Train)?;
        let logits = pass.logits();
        let k = logits.shape()[1];
        let wrong = logits.data().chunks(k).zip(&labels).filter(|(row, &l)| argmax(row) != l).count();
        let loss = pass.backward(&labels, &mut self.model.params)?;
        if loss.is_finite() {
            sgd_step(&mut self.model.params, opt);
        }
        Ok((loss, wrong))
    }

    /// Runs one epoch: shuffled mini-batch SGD with on-line train metrics,
    /// then a validation pass. Returns the rows appended to the history.
    pub fn run_epoch(&mut self, data: &TrainData) -> Result<&[EpochMetrics]> {
        let epoch = self.next_epoch;
        let lr = self.cfg.lr_at_epoch(epoch);
        let opt = self.cfg.optimizer(lr);
        let train = &data.train;
        check_dims(&self.model, train)?;
        if train.is_empty() {
            return Err(Error::Config("training set is empty".into()));
        }
        let started = Instant::now();
        let order = self.epoch_order(epoch, train.len());
        let (mut loss_sum, mut wrong) = (0.0f64, 0usize);
        for (b, chunk) in order.chunks(self.cfg.batch_size).enumerate() {
            let (loss, w) = self.train_batch(train, chunk, &opt)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b, lr });
            }
            wrong += w;
            loss_sum += loss * chunk.len() as f64;
        }
        let n = train.len() as f64;
        let seconds = |t: Instant| if self.cfg.record_time { t.elapsed().as_secs_f64() } else { 0.0 };
        let start_len = self.history.len();
        self.history.push(EpochMetrics {
            epoch,
            split: Split::Train,
            loss: loss_sum / n,
            error: wrong as f64 / n,
            lr,
            seconds: seconds(started),
        });

        if let Some(val) = &data.val {
            let t = Instant::now();
            let ev = evaluate(&mut self.model, val, self.cfg.eval_batch_size)?;
            self.history.push(EpochMetrics {
                epoch,
                split: Split::Val,
                loss: ev.loss,
                error: ev.error,
                lr,
                seconds: seconds(t),
            });
            let better = self.best.as_ref().is_none_or(|b| b.improved_by(ev.error, ev.loss));
            if better {
                self.best = Some(BestState {
                    epoch,
                    val_error: ev.error,
                    val_loss: ev.loss,
                    params: self.model.params.clone(),
                });
            }
        }
        self.next_epoch += 1;
        Ok(&self.history[start_len..])
    }

    /// Runs epochs until finished, calling `after_epoch` after each.
    pub fn fit(&mut self, data: &TrainData, mut after_epoch: impl FnMut(&Trainer) -> Result<()>) -> Result<()> {
        while !self.is_finished() {
            self.run_epoch(data)?;
            after_epoch(self)?;
        }
        Ok(())
    }

    /// Model with the best-validation parameters (or the current ones when no
    /// validation set was used).
    pub fn best_model(&self) -> Model<f32> {
        let mut m = self.model.clone();
        if let Some(b) = &self.best {
            m.params = b.params.clone();
        }
        m
    }

    /// Scores the final and the best-checkpoint models on the test split.
    pub fn test_report(&self, data: &TrainData) -> Result<Option<TestReport>> {
        let Some(test) = &data.test else { return Ok(None) };
        let final_eval = evaluate(&mut self.model.clone(), test, self.cfg.eval_batch_size)?;
        let best_eval = evaluate(&mut self.best_model(), test, self.cfg.eval_batch_size)?;
        Ok(Some(TestReport {
            final_epoch: self.next_epoch.saturating_sub(1),
            final_loss: final_eval.loss,
            final_error: final_eval.error,
            best_epoch: self.best.as_ref().map(|b| b.epoch),
            best_loss: best_eval.loss,
            best_error: best_eval.error,
        }))
    }
}

#[derive(Clone, Debug, Serialize, serde::Deserialize, PartialEq)]
pub struct TestReport {
    pub final_epoch: usize,
    pub final_loss: f64,
    pub final_error: f64,
    pub best_epoch: Option<usize>,
    pub best_loss: f64,
    pub best_error: f64,
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::data::{generate_pentomino, PentominoConfig, SplitCounts};
    use crate::nn::ModelConfig;
    use crate::nn::ResMixCfg;

    /// A narrow ResMixNet on 16×16 Pentomino-like images keeps unit tests fast.
    pub(crate) fn tiny_model() -> ModelConfig {
        let mut c = ResMixCfg::new(2, 1);
        c.stem_channels = 4;
        c.stage_channels = [4, 4, 8];
        ModelConfig::ResMixNet(c)
    }

    pub(crate) fn tiny_data(n: usize) -> TrainData {
        let cfg = PentominoConfig {
            counts: SplitCounts { train: n, val: n / 2, test: n / 2 },
            image_size: 16,
            grid: 2,
            ..Default::default()
        };
        TrainData {
            train: generate_pentomino(&cfg, Split::Train).unwrap(),
            val: Some(generate_pentomino(&cfg, Split::Val).unwrap()),
            test: Some(generate_pentomino(&cfg, Split::Test).unwrap()),
        }
    }

    pub(crate) fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            model: tiny_model(),
            batch_size: 8,
            epochs: 3,
            lr_milestones: vec![2],
            learning_rate: 0.05,
            record_time: false,
            ..Default::default()
        }
    }

    #[test]
    fn epoch_emits_train_and_val_rows() {
        let data = tiny_data(20);
        let mut t = Trainer::new(TrainConfig { epochs: 1, lr_milestones: vec![], ..tiny_cfg() }).unwrap();
        let rows = t.run_epoch(&data).unwrap().to_vec();
        assert_eq!(rows.len(), 2);
        assert_eq!((rows[0].split, rows[1].split), (Split::Train, Split::Val));
        for r in &rows {
            assert!(r.loss >= 0.0 && (0.0..=1.0).contains(&r.error));
        }
        assert!(t.is_finished());
        assert_eq!(t.best.as_ref().unwrap().epoch, 0);
    }

    #[test]
    fn runs_are_bitwise_reproducible() {
        let data = tiny_data(20);
        let run = || {
            let mut t = Trainer::new(tiny_cfg()).unwrap();
            t.fit(&data, |_| Ok(())).unwrap();
            (super::super::metrics::metrics_csv(&t.history), t.model.params.params()[0].value.clone())
        };
        let (a, pa) = run();
        let (b, pb) = run();
        assert_eq!(a, b);
        assert_eq!(pa, pb);
        assert!(a.contains("\n2,train,") && a.contains(",0.005,0\n"), "{a}");
    }

    #[test]
    fn frozen_run_leaves_parameters_unchanged() {
        let data = tiny_data(16);
        let cfg = TrainConfig { learning_rate: 0.0, weight_decay: 0.0, epochs: 1, lr_milestones: vec![], ..tiny_cfg() };
        let mut t = Trainer::new(cfg).unwrap();
        let before: Vec<Tensor<f32>> = t.model.params.params().iter().map(|p| p.value.clone()).collect();
        t.run_epoch(&data).unwrap();
        for (p, b) in t.model.params.params().iter().zip(&before) {
            assert!(p.value.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()), "{}", p.name);
        }
    }

    #[test]
    fn eval_is_batch_size_invariant_and_deterministic() {
        let data = tiny_data(24);
        let mut m = Model::<f32>::build(&tiny_model(), 3).unwrap();
        let a = evaluate(&mut m, &data.train, 5).unwrap();
        let b = evaluate(&mut m, &data.train, 24).unwrap();
        assert!((a.loss - b.loss).abs() < 1e-5);
        assert_eq!(a.predictions, b.predictions);
        assert_eq!(a, evaluate(&mut m, &data.train, 5).unwrap());
        for g in &a.gates {
            assert_eq!(g.values.len(), 24 * g.experts);
            for row in g.values.chunks(g.experts) {
                assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-5);
            }
        }
        assert_eq!(a.gates.iter().map(|g| g.module.as_str()).collect::<Vec<_>>(), ["m1", "m2"]);
    }

    #[test]
    fn best_state_tie_breaks() {
        let b = BestState { epoch: 3, val_error: 0.2, val_loss: 0.5, params: ParamSet::new() };
        assert!(b.improved_by(0.1, 9.0));
        assert!(b.improved_by(0.2, 0.4));
        assert!(!b.improved_by(0.2, 0.5));
        assert!(!b.improved_by(0.3, 0.0));
    }

    #[test]
    fn rejects_mismatched_channels() {
        let data = tiny_data(8);
        let mut c = ResMixCfg::new(2, 1);
        c.input_channels = 1;
        let mut m = Model::<f32>::build(&ModelConfig::ResMixNet(c), 0).unwrap();
        assert!(matches!(evaluate(&mut m, &data.train, 4), Err(Error::Config(_))));
    }
}
