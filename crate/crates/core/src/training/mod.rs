//! RMSProp training with a step learning-rate schedule, and multi-view
//! evaluation.

mod evaluate;
mod optimizer;
mod schedule;
mod trainer;

pub use evaluate::{average_view_probabilities, evaluate_with, EvalConfig, Evaluation};
pub use optimizer::{rmsprop_step, RmsProp, RmsPropConfig};
pub use schedule::LrSchedule;
pub use trainer::{
    evaluate_split, metrics_csv, train, EpochMetrics, TrainConfig, TrainHooks, TrainOutcome, METRICS_HEADER,
};
