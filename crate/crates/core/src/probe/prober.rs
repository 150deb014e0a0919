use crate::error::{Error, Result};
use crate::finetune::{score_outputs, FineTunedModel, Pooling};
use crate::tasks::{Label, MetricKind, Score, Split, TaskDataset};

use super::features::{FeatureRow, FeatureTable};
use super::subsets::DimensionSubset;

/// Head output for `vector` with every coordinate outside `subset` zeroed.
pub fn masked_head_inference(
    model: &FineTunedModel,
    vector: &[f64],
    subset: &DimensionSubset,
) -> Vec<f64> {
    model
        .head
        .forward_sparse(vector, subset.indices().iter().copied())
}

/// The same prediction computed by zeroing the head's input weights for
/// every unselected dimension instead of the input coordinates.
pub fn weight_masked_inference(
    model: &FineTunedModel,
    vector: &[f64],
    subset: &DimensionSubset,
) -> Vec<f64> {
    model
        .head
        .with_input_columns_zeroed(subset.indices())
        .forward_vec(vector)
}

/// Read-only view of a trained model and the sentence vectors of every
/// example, ready for repeated subset and level evaluation.
pub struct Prober<'m> {
    model: &'m FineTunedModel,
    table: FeatureTable,
    /// `inputs[level][row]`: CLS vector below the final level, the
    /// model's pooled vector at the final level.
    inputs: Vec<Vec<Vec<f64>>>,
}

impl<'m> Prober<'m> {
    /// Extracts vectors for all splits by running the model's encoder.
    pub fn new(model: &'m FineTunedModel, task: &TaskDataset) -> Result<Self> {
        let table = FeatureTable::from_model(model.encoder()?, task, None)?;
        Self::from_table(model, table)
    }

    /// Probes stored vectors, for instance read back from a dump.
    pub fn from_table(model: &'m FineTunedModel, table: FeatureTable) -> Result<Self> {
        table.validate()?;
        if table.d_model != model.head.d_model() {
            return Err(Error::Dimension(format!(
                "vectors have width {}, head expects {}",
                table.d_model,
                model.head.d_model()
            )));
        }
        if table.n_levels == 0 {
            return Err(Error::Data("table has no levels".into()));
        }
        let last = table.n_levels - 1;
        let widen = |v: &[f32]| v.iter().map(|&x| x as f64).collect::<Vec<f64>>();
        let inputs = (0..table.n_levels)
            .map(|l| {
                table
                    .rows
                    .iter()
                    .map(|r| match (l == last, model.pooling) {
                        (true, Pooling::MaxPool) => widen(&r.maxpool),
                        _ => widen(&r.levels[l]),
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            model,
            table,
            inputs,
        })
    }

    pub fn model(&self) -> &FineTunedModel {
        self.model
    }

    pub fn table(&self) -> &FeatureTable {
        &self.table
    }

    pub fn metric(&self) -> MetricKind {
        self.model.metric()
    }

    pub fn d_model(&self) -> usize {
        self.table.d_model
    }

    pub fn n_levels(&self) -> usize {
        self.table.n_levels
    }

    pub fn final_level(&self) -> usize {
        self.table.n_levels - 1
    }

    pub fn check_level(&self, layer: usize) -> Result<()> {
        if layer >= self.table.n_levels {
            return Err(Error::Index {
                index: layer,
                limit: self.table.n_levels,
            });
        }
        Ok(())
    }

    fn rows(&self, split: Split) -> impl Iterator<Item = (usize, &FeatureRow)> {
        self.table
            .rows
            .iter()
            .enumerate()
            .filter(move |(_, r)| r.split == split)
    }

    /// Example ids of a split, in table order.
    pub fn ids(&self, split: Split) -> Vec<u32> {
        self.rows(split).map(|(_, r)| r.id).collect()
    }

    pub fn labels(&self, split: Split) -> Vec<Label> {
        self.rows(split).map(|(_, r)| r.label).collect()
    }

    /// Head outputs for every example of `split`; `None` uses all dimensions.
    pub fn outputs(
        &self,
        split: Split,
        layer: usize,
        subset: Option<&DimensionSubset>,
    ) -> Result<Vec<Vec<f64>>> {
        self.check_level(layer)?;
        if let Some(s) = subset {
            s.check_within(self.d_model())?;
        }
        let head = &self.model.head;
        Ok(self
            .rows(split)
            .map(|(i, _)| {
                let x = &self.inputs[layer][i];
                match subset {
                    None => head.forward_vec(x),
                    Some(s) => head.forward_sparse(x, s.indices().iter().copied()),
                }
            })
            .collect())
    }

    pub fn evaluate(
        &self,
        split: Split,
        layer: usize,
        subset: Option<&DimensionSubset>,
    ) -> Result<Score> {
        let outputs = self.outputs(split, layer, subset)?;
        score_outputs(self.metric(), &outputs, &self.labels(split))
    }
}
