//! Task descriptions and the planted labelling rules.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use super::metrics::MetricKind;
use crate::encoder::{FIRST_CONTENT, SEP};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskKind {
    SingleCls,
    PairCls,
    Regression,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::SingleCls => "single_cls",
            TaskKind::PairCls => "pair_cls",
            TaskKind::Regression => "regression",
        }
    }

    pub fn is_classification(self) -> bool {
        !matches!(self, TaskKind::Regression)
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single_cls" => Ok(TaskKind::SingleCls),
            "pair_cls" => Ok(TaskKind::PairCls),
            "regression" => Ok(TaskKind::Regression),
            other => Err(Error::Config(format!("unknown task kind {other:?}"))),
        }
    }
}

/// How labels are derived from tokens. Each rule depends on at most two
/// token-level features.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SignalRule {
    /// Single sequence; label 1 iff `token` occurs.
    Presence { token: u32 },
    /// Single sequence; label 1 iff `a` or `b` occurs.
    AnyOf { a: u32, b: u32 },
    /// Single sequence; label 1 iff both occur.
    BothOf { a: u32, b: u32 },
    /// Single sequence, three classes: how many of `a`, `b` occur.
    CountOf { a: u32, b: u32 },
    /// Pair; label 1 iff the two segments share a content token.
    SharedToken,
    /// Pair; label 1 iff (`a` in first segment) equals (`b` in second).
    CrossPresence { a: u32, b: u32 },
    /// Pair; label 1 iff `a` is in the first segment and `b` in the second.
    PairedPresence { a: u32, b: u32 },
    /// Single sequence regression: fraction of content positions holding `token`.
    Density { token: u32 },
    /// Pair regression: shared distinct tokens over the shorter segment length.
    Overlap,
}

impl SignalRule {
    pub fn planted_tokens(&self) -> Vec<u32> {
        match *self {
            SignalRule::Presence { token } | SignalRule::Density { token } => vec![token],
            SignalRule::AnyOf { a, b }
            | SignalRule::BothOf { a, b }
            | SignalRule::CountOf { a, b }
            | SignalRule::CrossPresence { a, b }
            | SignalRule::PairedPresence { a, b } => vec![a, b],
            SignalRule::SharedToken | SignalRule::Overlap => vec![],
        }
    }

    pub fn is_pair(&self) -> bool {
        matches!(
            self,
            SignalRule::SharedToken
                | SignalRule::CrossPresence { .. }
                | SignalRule::PairedPresence { .. }
                | SignalRule::Overlap
        )
    }

    pub fn kind(&self) -> TaskKind {
        match self {
            SignalRule::Density { .. } | SignalRule::Overlap => TaskKind::Regression,
            r if r.is_pair() => TaskKind::PairCls,
            _ => TaskKind::SingleCls,
        }
    }

    pub fn n_classes(&self) -> usize {
        match self {
            SignalRule::CountOf { .. } => 3,
            SignalRule::Density { .. } | SignalRule::Overlap => 0,
            _ => 2,
        }
    }

    /// Splits a token sequence (with CLS and separators) into content
    /// segments according to the segment ids.
    pub(crate) fn segments(tokens: &[u32], segment_ids: &[u8]) -> (Vec<u32>, Vec<u32>) {
        let mut first = Vec::new();
        let mut second = Vec::new();
        for (&t, &s) in tokens.iter().zip(segment_ids).skip(1) {
            if t < FIRST_CONTENT || t == SEP {
                continue;
            }
            if s == 0 {
                first.push(t);
            } else {
                second.push(t);
            }
        }
        (first, second)
    }

    /// Clean label of a tokenised example.
    pub fn evaluate(&self, tokens: &[u32], segment_ids: &[u8]) -> RuleLabel {
        let (first, second) = Self::segments(tokens, segment_ids);
        let has = |seq: &[u32], t: u32| seq.contains(&t);
        match *self {
            SignalRule::Presence { token } => RuleLabel::Class(has(&first, token) as u32),
            SignalRule::AnyOf { a, b } => {
                RuleLabel::Class((has(&first, a) || has(&first, b)) as u32)
            }
            SignalRule::BothOf { a, b } => {
                RuleLabel::Class((has(&first, a) && has(&first, b)) as u32)
            }
            SignalRule::CountOf { a, b } => {
                RuleLabel::Class(has(&first, a) as u32 + has(&first, b) as u32)
            }
            SignalRule::SharedToken => {
                let set: HashSet<u32> = first.iter().copied().collect();
                RuleLabel::Class(second.iter().any(|t| set.contains(t)) as u32)
            }
            SignalRule::CrossPresence { a, b } => {
                RuleLabel::Class((has(&first, a) == has(&second, b)) as u32)
            }
            SignalRule::PairedPresence { a, b } => {
                RuleLabel::Class((has(&first, a) && has(&second, b)) as u32)
            }
            SignalRule::Density { token } => {
                let n = first.len().max(1) as f64;
                RuleLabel::Scalar(first.iter().filter(|&&t| t == token).count() as f64 / n)
            }
            SignalRule::Overlap => {
                let a: HashSet<u32> = first.iter().copied().collect();
                let b: HashSet<u32> = second.iter().copied().collect();
                let denom = a.len().min(b.len()).max(1) as f64;
                RuleLabel::Scalar(a.intersection(&b).count() as f64 / denom)
            }
        }
    }
}

/// Output of a rule before any label noise.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RuleLabel {
    Class(u32),
    Scalar(f64),
}

impl fmt::Display for SignalRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SignalRule::Presence { token } => write!(f, "presence:{token}"),
            SignalRule::AnyOf { a, b } => write!(f, "any_of:{a}:{b}"),
            SignalRule::BothOf { a, b } => write!(f, "both_of:{a}:{b}"),
            SignalRule::CountOf { a, b } => write!(f, "count_of:{a}:{b}"),
            SignalRule::SharedToken => write!(f, "shared_token"),
            SignalRule::CrossPresence { a, b } => write!(f, "cross_presence:{a}:{b}"),
            SignalRule::PairedPresence { a, b } => write!(f, "paired_presence:{a}:{b}"),
            SignalRule::Density { token } => write!(f, "density:{token}"),
            SignalRule::Overlap => write!(f, "overlap"),
        }
    }
}

impl FromStr for SignalRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').map(str::trim).collect();
        let num = |i: usize| -> Result<u32> {
            parts
                .get(i)
                .ok_or_else(|| Error::Config(format!("rule {s:?} is missing a token id")))?
                .parse()
                .map_err(|_| Error::Config(format!("rule {s:?} has a non-numeric token id")))
        };
        let expect = |n: usize| -> Result<()> {
            if parts.len() != n {
                return Err(Error::Config(format!(
                    "rule {s:?} takes {} token ids",
                    n - 1
                )));
            }
            Ok(())
        };
        let rule = match parts[0] {
            "presence" => {
                expect(2)?;
                SignalRule::Presence { token: num(1)? }
            }
            "any_of" => {
                expect(3)?;
                SignalRule::AnyOf {
                    a: num(1)?,
                    b: num(2)?,
                }
            }
            "both_of" => {
                expect(3)?;
                SignalRule::BothOf {
                    a: num(1)?,
                    b: num(2)?,
                }
            }
            "count_of" => {
                expect(3)?;
                SignalRule::CountOf {
                    a: num(1)?,
                    b: num(2)?,
                }
            }
            "shared_token" => {
                expect(1)?;
                SignalRule::SharedToken
            }
            "cross_presence" => {
                expect(3)?;
                SignalRule::CrossPresence {
                    a: num(1)?,
                    b: num(2)?,
                }
            }
            "paired_presence" => {
                expect(3)?;
                SignalRule::PairedPresence {
                    a: num(1)?,
                    b: num(2)?,
                }
            }
            "density" => {
                expect(2)?;
                SignalRule::Density { token: num(1)? }
            }
            "overlap" => {
                expect(1)?;
                SignalRule::Overlap
            }
            other => return Err(Error::Config(format!("unknown rule {other:?}"))),
        };
        Ok(rule)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskSpec {
    pub name: String,
    pub rule: SignalRule,
    pub metric: MetricKind,
    pub noise_rate: f64,
    pub n_examples: usize,
    pub seed: u64,
    pub vocab_size: usize,
    /// Inclusive content length range; per segment for pair rules.
    pub content_len: (usize, usize),
}

/// Smallest dataset whose 8:1:1 split leaves every split non-empty and
/// large enough to score.
pub const MIN_EXAMPLES: usize = 30;

impl TaskSpec {
    /// A task with the metric implied by its rule and default lengths.
    pub fn new(name: impl Into<String>, rule: SignalRule, n_examples: usize, seed: u64) -> Self {
        let metric = match rule.kind() {
            TaskKind::Regression => MetricKind::Pearson,
            _ => MetricKind::Accuracy,
        };
        let content_len = if rule.is_pair() { (3, 8) } else { (4, 12) };
        Self {
            name: name.into(),
            rule,
            metric,
            noise_rate: 0.0,
            n_examples,
            seed,
            vocab_size: 64,
            content_len,
        }
    }

    pub fn kind(&self) -> TaskKind {
        self.rule.kind()
    }

    pub fn n_classes(&self) -> usize {
        self.rule.n_classes()
    }

    /// Longest token sequence the task can produce, including CLS/SEP.
    pub fn max_tokens(&self) -> usize {
        if self.rule.is_pair() {
            2 * self.content_len.1 + 3
        } else {
            self.content_len.1 + 1
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_examples < MIN_EXAMPLES {
            return Err(Error::Data(format!(
                "{} examples is too small; at least {MIN_EXAMPLES} are needed for an 8:1:1 split",
                self.n_examples
            )));
        }
        if !(0.0..0.5).contains(&self.noise_rate) {
            return Err(Error::Config(format!(
                "noise_rate {} outside [0, 0.5)",
                self.noise_rate
            )));
        }
        let (lo, hi) = self.content_len;
        if lo == 0 || lo > hi {
            return Err(Error::Config(format!(
                "invalid content length range {lo}..={hi}"
            )));
        }
        for t in self.rule.planted_tokens() {
            if t < FIRST_CONTENT || t as usize >= self.vocab_size {
                return Err(Error::Config(format!(
                    "planted token {t} is not a content id below vocab size {}",
                    self.vocab_size
                )));
            }
        }
        let planted = self.rule.planted_tokens();
        if planted.len() == 2 && planted[0] == planted[1] {
            return Err(Error::Config("the two planted tokens must differ".into()));
        }
        let fillers = self.vocab_size - FIRST_CONTENT as usize - planted.len();
        if fillers < 2 * hi + 2 {
            return Err(Error::Config(format!(
                "vocabulary of {} leaves too few filler tokens for length {hi}",
                self.vocab_size
            )));
        }
        match (self.kind(), self.metric) {
            (TaskKind::Regression, MetricKind::Pearson) => {}
            (TaskKind::Regression, m) | (_, m @ MetricKind::Pearson) => {
                return Err(Error::Config(format!(
                    "metric {m} does not fit a {} task",
                    self.kind().as_str()
                )))
            }
            (_, MetricKind::Matthews) if self.n_classes() != 2 => {
                return Err(Error::Config("matthews needs a binary task".into()))
            }
            _ => {}
        }
        Ok(())
    }
}
