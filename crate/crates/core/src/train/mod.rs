//! Loss, optimization, threshold tuning and frame-level scoring.

mod checkpoint;
mod loss;
mod metrics;
mod threshold;
mod trainer;
mod weights;

pub use checkpoint::{geometry_hash, Checkpoint, CHECKPOINT_KIND, CHECKPOINT_VERSION};
pub use loss::{batch_loss, weighted_bce, weighted_bce_grad, LossConfig};
pub use metrics::{frame_f1, render_table, ClipScore, Confusion, EvalReport, FramePair, InstrumentScore};
pub use threshold::{threshold_grid, tune_thresholds, ThresholdVector};
pub use trainer::{
    predict_all, split_validation, train, tuned_macro_f1, EpochRecord, LrSchedule, TrainConfig, TrainExample,
    TrainOutcome, TrainState, Trainer,
};
pub use weights::compute_class_weights;
