use std::collections::BTreeMap;

use crate::encoder::EncoderWeights;
use crate::error::{Error, Result};
use crate::finetune::{argmax, finetune, FineTuneConfig, FineTunedModel};
use crate::tasks::{Score, Split, TaskDataset};

use super::prober::Prober;
use super::report::{sweep_subsets, ProbeReport, SubsetScore};
use super::subsets::DimensionSubset;

/// Number of best triples inspected when looking for effective dimensions.
pub const TOP_TRIPLES: usize = 10;
/// Number of effective dimensions kept.
pub const EFFECTIVE_DIMS: usize = 5;
/// Number of best subsets compared in error analysis.
pub const ERROR_SUBSETS: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct LeaveOneOutRow {
    pub removed: usize,
    pub pair: DimensionSubset,
    pub valid: Score,
    pub test: Score,
}

/// Scores of the three pairs left after removing each member of `triple`,
/// in the order of the removed dimension.
pub fn leave_one_out(
    prober: &Prober<'_>,
    triple: &DimensionSubset,
    layer: usize,
) -> Result<Vec<LeaveOneOutRow>> {
    if triple.len() != 3 {
        return Err(Error::Validation(format!(
            "leave-one-out needs 3 dimensions, got {}",
            triple.len()
        )));
    }
    triple
        .indices()
        .iter()
        .map(|&removed| {
            let pair = triple.without(removed);
            Ok(LeaveOneOutRow {
                removed,
                valid: prober.evaluate(Split::Valid, layer, Some(&pair))?,
                test: prober.evaluate(Split::Test, layer, Some(&pair))?,
                pair,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct EffectiveDims {
    /// Selected dimensions, largest drop first.
    pub dims: Vec<usize>,
    /// Largest drop seen for every dimension that appeared in an inspected
    /// triple, in the same order as the selection ranking.
    pub drops: Vec<(usize, f64)>,
    /// The inspected triples with their leave-one-out rows.
    pub triples: Vec<(SubsetScore, Vec<LeaveOneOutRow>)>,
}

/// Ranks dimensions by the largest valid-score drop their removal causes in
/// any of the `top_n` best triples of `report`, and keeps `n_dims`.
/// Undefined scores count as the metric's lower bound.
pub fn effective_dims(
    prober: &Prober<'_>,
    report: &ProbeReport,
    top_n: usize,
    n_dims: usize,
) -> Result<EffectiveDims> {
    if report.entries.iter().any(|e| e.subset.len() != 3) {
        return Err(Error::Validation(
            "effective dimensions are drawn from 3-dimension sets".into(),
        ));
    }
    if report.entries.len() < top_n {
        return Err(Error::InsufficientData {
            needed: top_n,
            got: report.entries.len(),
        });
    }
    let floor = report.metric.lower_bound();
    let value = |s: Score| s.value().unwrap_or(floor);
    let mut best: BTreeMap<usize, f64> = BTreeMap::new();
    let mut triples = Vec::with_capacity(top_n);
    for entry in &report.entries[..top_n] {
        let rows = leave_one_out(prober, &entry.subset, report.layer)?;
        for row in &rows {
            let drop = value(entry.valid) - value(row.valid);
            best.entry(row.removed)
                .and_modify(|d| *d = d.max(drop))
                .or_insert(drop);
        }
        triples.push((entry.clone(), rows));
    }
    let mut drops: Vec<(usize, f64)> = best.into_iter().collect();
    drops.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    if drops.len() < n_dims {
        return Err(Error::InsufficientData {
            needed: n_dims,
            got: drops.len(),
        });
    }
    Ok(EffectiveDims {
        dims: drops[..n_dims].iter().map(|d| d.0).collect(),
        drops,
        triples,
    })
}

/// Sweeps every pair of `dims` at the final level.
pub fn pair_combinations(prober: &Prober<'_>, dims: &[usize]) -> Result<ProbeReport> {
    let set = DimensionSubset::from_unsorted(dims.to_vec())?;
    if set.len() < 2 {
        return Err(Error::Validation(
            "need at least two dimensions to pair".into(),
        ));
    }
    let d = set.indices();
    let mut pairs = Vec::new();
    for i in 0..d.len() {
        for j in i + 1..d.len() {
            pairs.push(DimensionSubset::new(vec![d[i], d[j]])?);
        }
    }
    sweep_subsets(prober, &pairs, prober.final_level())
}

/// Display name of a level: the embedding output, then layer 1 upward.
pub fn level_label(level: usize) -> String {
    if level == 0 {
        "embedding".to_string()
    } else {
        format!("layer {level}")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerReport {
    pub level: usize,
    pub label: String,
    pub report: ProbeReport,
}

/// The same subsets evaluated at every level with the final-level head;
/// each level keeps its `top` best entries.
pub fn layer_sweep(
    prober: &Prober<'_>,
    subsets: &[DimensionSubset],
    top: usize,
) -> Result<Vec<LayerReport>> {
    (0..prober.n_levels())
        .map(|level| {
            Ok(LayerReport {
                level,
                label: level_label(level),
                report: sweep_subsets(prober, subsets, level)?.truncated(top),
            })
        })
        .collect()
}

/// Counts of scores in bins one metric point wide.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreHistogram {
    pub label: String,
    /// Bin `b` holds scores in `[b, b + 1)` points.
    pub bins: BTreeMap<i64, usize>,
    pub undefined: usize,
    pub threshold: f64,
    /// Number of defined scores strictly above `threshold` (metric units).
    pub above_threshold: usize,
}

impl ScoreHistogram {
    pub fn from_scores(label: impl Into<String>, scores: &[Score], threshold: f64) -> Self {
        let mut bins = BTreeMap::new();
        let mut undefined = 0;
        let mut above = 0;
        for s in scores {
            match s.value() {
                None => undefined += 1,
                Some(v) => {
                    // Scores such as 29/100 land a hair under the bin edge.
                    let bin = (v * 100.0 + 1e-9).floor() as i64;
                    *bins.entry(bin).or_insert(0) += 1;
                    if v > threshold {
                        above += 1;
                    }
                }
            }
        }
        Self {
            label: label.into(),
            bins,
            undefined,
            threshold,
            above_threshold: above,
        }
    }

    pub fn total(&self) -> usize {
        self.bins.values().sum::<usize>() + self.undefined
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationArm {
    pub dropout_rate: f64,
    pub model: FineTunedModel,
    pub report: ProbeReport,
    pub histogram: ScoreHistogram,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DropoutAblation {
    pub with_dropout: AblationArm,
    pub without_dropout: AblationArm,
}

/// Fine-tunes with `cfg.dropout_rate` and with no dropout (same seeds),
/// sweeps the same subsets on both, and bins the test scores.
pub fn dropout_ablation(
    pretrained: &EncoderWeights,
    task: &TaskDataset,
    cfg: &FineTuneConfig,
    subsets: &[DimensionSubset],
    threshold: f64,
) -> Result<DropoutAblation> {
    let arm = |rate: f64, label: &str| -> Result<AblationArm> {
        let cfg = FineTuneConfig {
            dropout_rate: rate,
            ..cfg.clone()
        };
        let model = finetune(pretrained, task, &cfg)?;
        let prober = Prober::new(&model, task)?;
        let report = sweep_subsets(&prober, subsets, prober.final_level())?;
        let scores: Vec<Score> = report.entries.iter().map(|e| e.test).collect();
        let histogram = ScoreHistogram::from_scores(label, &scores, threshold);
        drop(prober);
        Ok(AblationArm {
            dropout_rate: rate,
            model,
            report,
            histogram,
        })
    };
    Ok(DropoutAblation {
        with_dropout: arm(cfg.dropout_rate, "with dropout")?,
        without_dropout: arm(0.0, "without dropout")?,
    })
}

/// Test ids classified correctly with all dimensions but wrongly by every
/// one of the given subsets, at the final level.
pub fn consistent_error_set(prober: &Prober<'_>, top5: &[DimensionSubset]) -> Result<Vec<u32>> {
    if !prober.model().task.kind.is_classification() {
        return Err(Error::UnsupportedTask(format!(
            "error analysis needs a classification task, {} is regression",
            prober.model().task.name
        )));
    }
    if top5.len() != ERROR_SUBSETS {
        return Err(Error::Validation(format!(
            "expected {ERROR_SUBSETS} subsets, got {}",
            top5.len()
        )));
    }
    let level = prober.final_level();
    let gold: Vec<Option<u32>> = prober
        .labels(Split::Test)
        .iter()
        .map(|l| l.class())
        .collect();
    let predict = |subset: Option<&DimensionSubset>| -> Result<Vec<u32>> {
        Ok(prober
            .outputs(Split::Test, level, subset)?
            .iter()
            .map(|o| argmax(o))
            .collect())
    };
    let all = predict(None)?;
    let mut keep: Vec<bool> = all.iter().zip(&gold).map(|(p, g)| Some(*p) == *g).collect();
    for s in top5 {
        for (k, (p, g)) in keep.iter_mut().zip(predict(Some(s))?.iter().zip(&gold)) {
            *k &= Some(*p) != *g;
        }
    }
    Ok(prober
        .ids(Split::Test)
        .into_iter()
        .zip(keep)
        .filter_map(|(id, k)| k.then_some(id))
        .collect())
}
