//! Measurements on a fine-tuned model: which token, which dimensions and
//! which level carry the task signal.

mod analysis;
mod features;
mod prober;
mod report;
mod subsets;

pub use analysis::{
    consistent_error_set, dropout_ablation, effective_dims, layer_sweep, leave_one_out,
    level_label, pair_combinations, AblationArm, DropoutAblation, EffectiveDims, LayerReport,
    LeaveOneOutRow, ScoreHistogram, EFFECTIVE_DIMS, ERROR_SUBSETS, TOP_TRIPLES,
};
pub(crate) use features::maxpool_position_in;
pub use features::{
    cls_vector, maxpool_position, maxpool_token_vector, FeatureRow, FeatureTable, LabelKind,
};
pub use prober::{masked_head_inference, weight_masked_inference, Prober};
pub use report::{sweep_sample, sweep_subsets, ProbeReport, SamplingInfo, SubsetScore};
pub use subsets::{
    binomial, enumerate_or_sample_subsets, population, unrank, DimensionSubset, SampleMode,
    SubsetSample,
};
