//! Sentence vectors extracted from encoder traces.
//!
//! A [`FeatureTable`] holds, for every example, the CLS vector of each level
//! and the final-level MaxPooling vector, stored in single precision. Both
//! in-memory probing and probing of an exported dump read this table, so
//! the two routes see identical inputs.

use crate::encoder::{forward, ActivationTrace, EncoderWeights};
use crate::error::{Error, Result};
use crate::tasks::{Label, Split, TaskDataset};

/// CLS row (position 0) of the requested level.
pub fn cls_vector(trace: &ActivationTrace, layer: usize) -> Result<Vec<f64>> {
    Ok(trace.level(layer)?.row(0).to_vec())
}

/// Position of the final-level token vector with the largest Euclidean
/// norm among non-padding positions (CLS included); ties go to the lowest
/// position.
pub fn maxpool_position(trace: &ActivationTrace) -> Result<usize> {
    maxpool_position_in(trace.final_level(), trace.attention_mask())
}

pub(crate) fn maxpool_position_in(level: &crate::numerics::Matrix, mask: &[bool]) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (pos, &real) in mask.iter().enumerate() {
        if !real {
            continue;
        }
        let norm_sq: f64 = level.row(pos).iter().map(|v| v * v).sum();
        if best.is_none_or(|(_, b)| norm_sq > b) {
            best = Some((pos, norm_sq));
        }
    }
    best.map(|(p, _)| p)
        .ok_or_else(|| Error::Data("input has no non-padding token".into()))
}

/// Final-level token vector selected by largest norm.
pub fn maxpool_token_vector(trace: &ActivationTrace) -> Result<Vec<f64>> {
    let pos = maxpool_position(trace)?;
    Ok(trace.final_level().row(pos).to_vec())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabelKind {
    Class,
    Scalar,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureRow {
    pub id: u32,
    pub label: Label,
    pub split: Split,
    /// One CLS vector per level.
    pub levels: Vec<Vec<f32>>,
    pub maxpool: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTable {
    pub n_levels: usize,
    pub d_model: usize,
    pub label_kind: LabelKind,
    pub n_classes: u32,
    pub split_coded: bool,
    pub rows: Vec<FeatureRow>,
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

/// Scalar labels are kept at the precision a dump stores them with.
fn stored_label(label: Label) -> Label {
    match label {
        Label::Scalar(v) => Label::Scalar(v as f32 as f64),
        class => class,
    }
}

impl FeatureTable {
    /// Runs the encoder in inference mode over the examples in `splits`
    /// (every example when `None`).
    pub fn from_model(
        encoder: &EncoderWeights,
        task: &TaskDataset,
        splits: Option<&[Split]>,
    ) -> Result<Self> {
        let cfg = encoder.config();
        let mut rows = Vec::new();
        for (idx, ex) in task.examples.iter().enumerate() {
            let split = task
                .split_of(idx)
                .ok_or_else(|| Error::Data(format!("example {idx} is in no split")))?;
            if splits.is_some_and(|s| !s.contains(&split)) {
                continue;
            }
            let trace = forward(encoder, &ex.tokens, &ex.segments, false, 0)?;
            let levels = (0..trace.n_levels())
                .map(|l| cls_vector(&trace, l).map(|v| to_f32(&v)))
                .collect::<Result<Vec<_>>>()?;
            rows.push(FeatureRow {
                id: ex.id,
                label: stored_label(ex.label),
                split,
                levels,
                maxpool: to_f32(&maxpool_token_vector(&trace)?),
            });
        }
        let regression = !task.spec.kind().is_classification();
        Ok(Self {
            n_levels: cfg.n_levels(),
            d_model: cfg.d_model,
            label_kind: if regression {
                LabelKind::Scalar
            } else {
                LabelKind::Class
            },
            n_classes: task.spec.n_classes() as u32,
            split_coded: true,
            rows,
        })
    }

    pub fn validate(&self) -> Result<()> {
        for r in &self.rows {
            if r.levels.len() != self.n_levels
                || r.levels.iter().any(|v| v.len() != self.d_model)
                || r.maxpool.len() != self.d_model
            {
                return Err(Error::Dimension(format!(
                    "row {} does not hold {} levels of width {}",
                    r.id, self.n_levels, self.d_model
                )));
            }
            match (self.label_kind, r.label) {
                (LabelKind::Class, Label::Class(c)) if c < self.n_classes.max(1) => {}
                (LabelKind::Scalar, Label::Scalar(_)) => {}
                _ => {
                    return Err(Error::Data(format!(
                        "row {} label {:?} does not match the table's label kind",
                        r.id, r.label
                    )))
                }
            }
        }
        Ok(())
    }

    pub fn rows_in(&self, split: Split) -> impl Iterator<Item = &FeatureRow> {
        self.rows.iter().filter(move |r| r.split == split)
    }
}
