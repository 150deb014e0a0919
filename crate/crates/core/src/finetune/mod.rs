//! Classification and regression heads and the training protocols built on
//! them: plain fine-tuning, frozen encoders, and task switching.

mod head;
mod protocols;
mod train;

pub use head::{init_head, Head};
pub use protocols::{
    baseline_scores, cross_finetune, evaluate, freeze_compare, head_reset_seed, CrossReport,
    FreezeArm, FreezeReport,
};
pub use train::{
    argmax, finetune, score_outputs, score_table, train_head_on_dump, FineTuneConfig,
    FineTunedModel, Pooling, TaskInfo, DEFAULT_LEARNING_RATE,
};
