use crate::encoder::EncoderWeights;
use crate::error::{Error, Result};
use crate::probe::{DimensionSubset, Prober};
use crate::tasks::{Score, Split, TaskDataset};

use super::train::{finetune, finetune_with_head_seed, FineTuneConfig, FineTunedModel};

/// Score of `model` on `split` at `layer`, using only `subset` when given.
pub fn evaluate(
    model: &FineTunedModel,
    task: &TaskDataset,
    split: Split,
    layer: usize,
    subset: Option<&DimensionSubset>,
) -> Result<Score> {
    if split == Split::Train {
        return Err(Error::Validation(
            "evaluation reads the valid or test split".into(),
        ));
    }
    Prober::new(model, task)?.evaluate(split, layer, subset)
}

/// Valid and test scores with all dimensions at the final level.
pub fn baseline_scores(model: &FineTunedModel, task: &TaskDataset) -> Result<(Score, Score)> {
    let p = Prober::new(model, task)?;
    let level = p.final_level();
    Ok((
        p.evaluate(Split::Valid, level, None)?,
        p.evaluate(Split::Test, level, None)?,
    ))
}

/// Seed of the fresh head used after switching tasks.
pub fn head_reset_seed(cfg: &FineTuneConfig) -> u64 {
    cfg.seed.wrapping_add(1)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CrossReport {
    pub source_task: String,
    pub target_task: String,
    /// Source model on its own valid and test splits.
    pub source: (Score, Score),
    /// Source-then-target model on the target valid and test splits.
    pub cross: (Score, Score),
    /// Model fine-tuned on the target alone.
    pub direct: (Score, Score),
    pub reset_seed: u64,
}

/// Fine-tunes on `source`, replaces the head with a fresh one, fine-tunes
/// on `target`, and compares against fine-tuning on `target` directly.
pub fn cross_finetune(
    pretrained: &EncoderWeights,
    source: &TaskDataset,
    target: &TaskDataset,
    cfg: &FineTuneConfig,
) -> Result<(FineTunedModel, CrossReport)> {
    let on_source = finetune(pretrained, source, cfg)?;
    let source_scores = baseline_scores(&on_source, source)?;
    let reset_seed = head_reset_seed(cfg);
    let cross = finetune_with_head_seed(on_source.encoder()?, target, cfg, reset_seed)?;
    let direct = finetune(pretrained, target, cfg)?;
    let report = CrossReport {
        source_task: source.spec.name.clone(),
        target_task: target.spec.name.clone(),
        source: source_scores,
        cross: baseline_scores(&cross, target)?,
        direct: baseline_scores(&direct, target)?,
        reset_seed,
    };
    Ok((cross, report))
}

#[derive(Clone, Debug, PartialEq)]
pub struct FreezeArm {
    pub model: FineTunedModel,
    pub valid: Score,
    pub test: Score,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FreezeReport {
    /// Encoder trained, single-stage head.
    pub unfrozen: FreezeArm,
    /// Encoder fixed, two-stage head.
    pub frozen: FreezeArm,
}

pub fn freeze_compare(
    pretrained: &EncoderWeights,
    task: &TaskDataset,
    cfg: &FineTuneConfig,
) -> Result<FreezeReport> {
    let arm = |freeze: bool, depth: usize| -> Result<FreezeArm> {
        let cfg = FineTuneConfig {
            freeze_encoder: freeze,
            head_depth: depth,
            ..cfg.clone()
        };
        let model = finetune(pretrained, task, &cfg)?;
        let (valid, test) = baseline_scores(&model, task)?;
        Ok(FreezeArm { model, valid, test })
    };
    Ok(FreezeReport {
        unfrozen: arm(false, 1)?,
        frozen: arm(true, 2)?,
    })
}
