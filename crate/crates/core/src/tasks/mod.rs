//! Synthetic classification and regression tasks with planted signals,
//! 8:1:1 splits, and the scoring metrics.

mod corpus;
mod dataset;
mod metrics;
mod spec;

pub use corpus::bigram_corpus;
pub use dataset::{generate_task, split_indices, split_sizes, Example, Label, Split, TaskDataset};
pub use metrics::{accuracy, matthews, pearson, MetricKind, Score};
pub use spec::{RuleLabel, SignalRule, TaskKind, TaskSpec, MIN_EXAMPLES};
