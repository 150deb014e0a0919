//! Accuracy, Pearson correlation and Matthews correlation.

use std::cmp::Ordering;
use std::fmt;

use crate::error::{Error, Result};

/// Which metric a task is scored with.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MetricKind {
    Accuracy,
    Pearson,
    Matthews,
}

impl MetricKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Accuracy => "accuracy",
            MetricKind::Pearson => "pearson",
            MetricKind::Matthews => "matthews",
        }
    }

    /// Smallest value the metric can take.
    pub fn lower_bound(self) -> f64 {
        match self {
            MetricKind::Accuracy => 0.0,
            MetricKind::Pearson | MetricKind::Matthews => -1.0,
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "accuracy" => Ok(MetricKind::Accuracy),
            "pearson" => Ok(MetricKind::Pearson),
            "matthews" => Ok(MetricKind::Matthews),
            other => Err(Error::Config(format!("unknown metric {other:?}"))),
        }
    }
}

/// A metric value, or undefined (constant input to Pearson).
///
/// Undefined sorts below every defined value and renders as `NaN`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Score(Option<f64>);

impl Score {
    pub const UNDEFINED: Score = Score(None);

    pub fn new(v: f64) -> Self {
        if v.is_finite() {
            Score(Some(v))
        } else {
            Score(None)
        }
    }

    pub fn value(self) -> Option<f64> {
        self.0
    }

    pub fn is_defined(self) -> bool {
        self.0.is_some()
    }

    /// Value on the 0-100 scale used when comparing "points".
    pub fn points(self) -> Option<f64> {
        self.0.map(|v| v * 100.0)
    }

    /// Total order for ranking: undefined lowest, then by value.
    pub fn rank_cmp(&self, other: &Score) -> Ordering {
        match (self.0, other.0) {
            (None, None) => Ordering::Equal,
            (None, Some(_)) => Ordering::Less,
            (Some(_), None) => Ordering::Greater,
            (Some(a), Some(b)) => a.total_cmp(&b),
        }
    }
}

impl fmt::Display for Score {
    /// Four decimals, ties to even; undefined renders as `NaN`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Some(v) => write!(f, "{v:.4}"),
            None => f.write_str("NaN"),
        }
    }
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Dimension(format!(
            "{a} predictions against {b} gold labels"
        )));
    }
    Ok(())
}

/// Fraction of positions where prediction equals gold.
pub fn accuracy(predictions: &[u32], gold: &[u32]) -> Result<f64> {
    check_lengths(predictions.len(), gold.len())?;
    if gold.is_empty() {
        return Err(Error::Data("accuracy of an empty set".into()));
    }
    let hits = predictions.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / gold.len() as f64)
}

/// Sample Pearson correlation; undefined when either side is constant.
pub fn pearson(predictions: &[f64], gold: &[f64]) -> Result<Score> {
    check_lengths(predictions.len(), gold.len())?;
    if gold.len() < 2 {
        return Err(Error::Data(format!(
            "pearson needs at least 2 pairs, got {}",
            gold.len()
        )));
    }
    let n = gold.len() as f64;
    let mx = predictions.iter().sum::<f64>() / n;
    let my = gold.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in predictions.iter().zip(gold) {
        let dx = x - mx;
        let dy = y - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(Score::UNDEFINED);
    }
    Ok(Score::new(
        (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0),
    ))
}

/// Matthews correlation for binary labels; zero when any marginal is empty.
pub fn matthews(predictions: &[u32], gold: &[u32]) -> Result<f64> {
    check_lengths(predictions.len(), gold.len())?;
    if let Some(bad) = predictions.iter().chain(gold).find(|&&v| v > 1) {
        return Err(Error::Domain(format!(
            "matthews needs binary labels, found {bad}"
        )));
    }
    let (mut tp, mut tn, mut fp, mut fne) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for (&p, &g) in predictions.iter().zip(gold) {
        match (p, g) {
            (1, 1) => tp += 1.0,
            (0, 0) => tn += 1.0,
            (1, 0) => fp += 1.0,
            _ => fne += 1.0,
        }
    }
    let denom = (tp + fp) * (tp + fne) * (tn + fp) * (tn + fne);
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok((tp * tn - fp * fne) / denom.sqrt())
}
