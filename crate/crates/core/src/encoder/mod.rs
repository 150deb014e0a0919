//! Desk-scale transformer encoder with per-level activation traces.

mod config;
mod forward;
mod pretrain;
mod weights;

pub use config::{EncoderConfig, CLS, DEFAULT_INIT_STD, FIRST_CONTENT, MASK, PAD, SEP};
pub(crate) use forward::{encode, maybe_dropout, Dropout, EncoderVars};
pub use forward::{
    forward, pair_input, record_forward, record_mlm_logits, single_input, ActivationTrace,
    LAYER_NORM_EPS, PAD_MASK_BIAS,
};
pub use pretrain::{pretrain_mlm, PretrainOptions};
pub(crate) use weights::random_matrix;
pub use weights::{parameter_layout, truncated_normal, EncoderWeights, LayerParam, INIT_STD};
