//! Training loop, checkpoints, metrics, prediction and evaluation.

mod config;
mod infer;
mod metrics;
mod plot;
mod trainer;

pub use config::{AugmentConfig, DataConfig, DataSource, OptimizerConfig, Seeds, TrainConfig};
pub use infer::{evaluate, predict, score_masks, EvalReport, EvalRow, Predictor};
pub use metrics::{parse_metrics, read_metrics, EpochRecord, MetricsWriter, METRICS_HEADER};
pub use plot::{emit_loss_curve, layout, render_loss_curve, PlotLayout, TRAIN_COLOR, VAL_COLOR};
pub use trainer::{
    epoch_checkpoint_name, load_split, train, train_on, validate, TrainArtifacts, TrainMeta, ValidationResult,
    BEST_CKPT, CONFIG_FILE, LAST_CKPT, METRICS_FILE,
};
