use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::tasks::{MetricKind, Score, Split};

use super::prober::Prober;
use super::subsets::{DimensionSubset, SampleMode, SubsetSample};

#[derive(Clone, Debug, PartialEq)]
pub struct SubsetScore {
    pub subset: DimensionSubset,
    pub layer: usize,
    pub valid: Score,
    pub test: Score,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplingInfo {
    pub k: usize,
    pub population: u64,
    pub count: usize,
    pub rate: Option<f64>,
    pub seed: u64,
}

/// Subset scores at one level, ranked by valid score (descending, ties by
/// lexicographic subset order, undefined scores last).
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeReport {
    pub task: String,
    pub metric: MetricKind,
    pub layer: usize,
    /// All dimensions at this level.
    pub baseline_valid: Score,
    pub baseline: Score,
    pub entries: Vec<SubsetScore>,
    pub sampling: Option<SamplingInfo>,
}

impl ProbeReport {
    pub fn top(&self) -> Option<&SubsetScore> {
        self.entries.first()
    }

    /// Keeps the `n` best-ranked entries.
    pub fn truncated(mut self, n: usize) -> Self {
        self.entries.truncate(n);
        self
    }
}

pub(crate) fn rank_entries(entries: &mut [SubsetScore]) {
    entries.sort_by(|a, b| {
        b.valid
            .rank_cmp(&a.valid)
            .then_with(|| a.subset.cmp(&b.subset))
    });
}

/// Valid and test scores of every subset at `layer`, plus the all-dimension
/// baseline.
pub fn sweep_subsets(
    prober: &Prober<'_>,
    subsets: &[DimensionSubset],
    layer: usize,
) -> Result<ProbeReport> {
    prober.check_level(layer)?;
    if subsets.is_empty() {
        return Err(Error::Validation("no subsets to sweep".into()));
    }
    let mut seen = HashSet::with_capacity(subsets.len());
    for s in subsets {
        s.check_within(prober.d_model())?;
        if !seen.insert(s) {
            return Err(Error::Validation(format!("subset {s} listed twice")));
        }
    }
    let mut entries = subsets
        .iter()
        .map(|s| {
            Ok(SubsetScore {
                subset: s.clone(),
                layer,
                valid: prober.evaluate(Split::Valid, layer, Some(s))?,
                test: prober.evaluate(Split::Test, layer, Some(s))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    rank_entries(&mut entries);
    Ok(ProbeReport {
        task: prober.model().task.name.clone(),
        metric: prober.metric(),
        layer,
        baseline_valid: prober.evaluate(Split::Valid, layer, None)?,
        baseline: prober.evaluate(Split::Test, layer, None)?,
        entries,
        sampling: None,
    })
}

/// [`sweep_subsets`] over a drawn sample, recording how it was drawn.
pub fn sweep_sample(
    prober: &Prober<'_>,
    sample: &SubsetSample,
    layer: usize,
) -> Result<ProbeReport> {
    let mut report = sweep_subsets(prober, &sample.subsets, layer)?;
    report.sampling = Some(SamplingInfo {
        k: sample.k,
        population: sample.population,
        count: sample.subsets.len(),
        rate: match sample.mode {
            SampleMode::Rate(r) => Some(r),
            SampleMode::Exhaustive => Some(1.0),
            SampleMode::Count(_) => None,
        },
        seed: sample.seed,
    });
    Ok(report)
}
