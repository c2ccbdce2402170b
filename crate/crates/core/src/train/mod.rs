//! Training recipe, evaluation, checkpoints and learning-rate sweeps.

mod checkpoint;
mod config;
mod metrics;
mod presets;
mod run;
mod sweep;
mod trainer;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, load_model, save_checkpoint, BestMeta, CheckpointHeader,
    RngState, TensorEntry, TensorRole, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::{lr_at_epoch, DataPaths, TrainConfig, LR_GRID, SEED_GRID};
pub use metrics::{curves_csv, metrics_csv, parse_metrics_csv, write_metrics_csv, EpochMetrics, METRICS_HEADER};
pub use presets::{preset, presets, Preset};
pub use run::{load_split, load_train_data, run_in_dir, RunSummary, CHECKPOINT_FILE, METRICS_FILE, SUMMARY_FILE};
pub use sweep::{group_thousands, mean, sample_std, summarize, sweep, CellResult, LrSummary, SweepSummary};
pub use trainer::{batch_tensor, evaluate, BestState, Evaluation, GateExport, TestReport, TrainData, Trainer};
