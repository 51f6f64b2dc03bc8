//! Joint-objective training: loss, Adam, learning-rate schedule, early
//! stopping and the resumable epoch loop.

mod adam;
mod config;
mod loss;
mod schedule;
mod trainer;

pub use adam::{adam_step, clip_global_norm, AdamState};
pub use config::TrainConfig;
pub use loss::{joint_loss, utterance_loss};
pub use schedule::{lr_schedule, EarlyStopping};
pub use trainer::{
    parse_metrics_log, resume_training, train_loop, train_model, EpochMetrics, TrainOutcome, STATE_FILE,
    BEST_FILE, METRICS_FILE,
};
