//! Tree walks, prediction heads, training and evaluation.

mod metrics;
mod split;
mod train;
mod walk;

pub use metrics::{accuracy, auc, average_precision, Metrics};
pub use split::{make_link_split, LinkExample, LinkSplit, SplitRatios, Task};
pub use train::{
    evaluate, AblationFlags, EdenModel, EpochRecord, Examples, Predictions, Session, SplitMetrics, Targets, TrainConfig, TrainOutcome,
};
pub use walk::{sample_walk, transitions, MoveKind, Transition, WalkConfig, WalkPath};
