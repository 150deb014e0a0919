//! Deterministic generation of planted-signal datasets and their splits.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::spec::{RuleLabel, SignalRule, TaskKind, TaskSpec};
use crate::encoder::{pair_input, single_input, FIRST_CONTENT};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Label {
    Class(u32),
    Scalar(f64),
}

impl Label {
    pub fn class(self) -> Option<u32> {
        match self {
            Label::Class(c) => Some(c),
            Label::Scalar(_) => None,
        }
    }

    pub fn scalar(self) -> f64 {
        match self {
            Label::Class(c) => c as f64,
            Label::Scalar(v) => v,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn code(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Valid => 1,
            Split::Test => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Split::Train),
            1 => Ok(Split::Valid),
            2 => Ok(Split::Test),
            other => Err(Error::Format(format!("unknown split code {other}"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub id: u32,
    pub tokens: Vec<u32>,
    pub segments: Vec<u8>,
    pub label: Label,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskDataset {
    pub spec: TaskSpec,
    pub examples: Vec<Example>,
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

impl TaskDataset {
    pub fn split(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn split_of(&self, index: usize) -> Option<Split> {
        [Split::Train, Split::Valid, Split::Test]
            .into_iter()
            .find(|&s| self.split(s).binary_search(&index).is_ok())
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Replaces the labels of every test example; used to show that
    /// selection never looks at test labels.
    pub fn with_test_labels(&self, f: impl Fn(&Example) -> Label) -> TaskDataset {
        let mut out = self.clone();
        for &i in &self.test {
            out.examples[i].label = f(&self.examples[i]);
        }
        out
    }
}

/// Split sizes for `n` examples: (train, valid, test).
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let v = n / 10;
    (n - 2 * v, v, v)
}

/// Disjoint, sorted train/valid/test index lists drawn from `seed`.
pub fn split_indices(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let (_, nv, nt) = split_sizes(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_5B17));
    let mut valid = order[..nv].to_vec();
    let mut test = order[nv..nv + nt].to_vec();
    let mut train = order[nv + nt..].to_vec();
    valid.sort_unstable();
    test.sort_unstable();
    train.sort_unstable();
    (train, valid, test)
}

struct Builder<'a> {
    spec: &'a TaskSpec,
    fillers: Vec<u32>,
    rng: ChaCha8Rng,
}

impl Builder<'_> {
    fn len(&mut self) -> usize {
        let (lo, hi) = self.spec.content_len;
        self.rng.random_range(lo..=hi)
    }

    fn filler_seq(&mut self, len: usize, exclude: &[u32]) -> Vec<u32> {
        (0..len)
            .map(|_| loop {
                let t = *self.fillers.choose(&mut self.rng).expect("fillers");
                if !exclude.contains(&t) {
                    break t;
                }
            })
            .collect()
    }

    /// Overwrites distinct random positions of `seq` with `tokens`.
    fn plant(&mut self, seq: &mut [u32], tokens: &[u32]) {
        let picks = rand::seq::index::sample(&mut self.rng, seq.len(), tokens.len());
        for (pos, &t) in picks.into_iter().zip(tokens) {
            seq[pos] = t;
        }
    }

    fn single(&mut self, planted: &[u32]) -> Vec<u32> {
        let len = self.len().max(planted.len());
        let mut seq = self.filler_seq(len, &[]);
        self.plant(&mut seq, planted);
        seq
    }

    fn pick<T: Copy>(&mut self, options: &[T]) -> T {
        *options.choose(&mut self.rng).expect("non-empty options")
    }

    /// Content (first, second) for a target class under `rule`.
    fn build_class(&mut self, rule: &SignalRule, label: u32) -> (Vec<u32>, Option<Vec<u32>>) {
        match *rule {
            SignalRule::Presence { token } => {
                let planted: &[u32] = if label == 1 { &[token] } else { &[] };
                (self.single(planted), None)
            }
            SignalRule::AnyOf { a, b } => {
                let planted = if label == 1 {
                    self.pick(&[&[a][..], &[b][..], &[a, b][..]]).to_vec()
                } else {
                    vec![]
                };
                (self.single(&planted), None)
            }
            SignalRule::BothOf { a, b } => {
                let planted = if label == 1 {
                    vec![a, b]
                } else {
                    self.pick(&[&[][..], &[a][..], &[b][..]]).to_vec()
                };
                (self.single(&planted), None)
            }
            SignalRule::CountOf { a, b } => {
                let planted = match label {
                    0 => vec![],
                    1 => self.pick(&[&[a][..], &[b][..]]).to_vec(),
                    _ => vec![a, b],
                };
                (self.single(&planted), None)
            }
            SignalRule::CrossPresence { .. } | SignalRule::PairedPresence { .. } => {
                let (a, b, cross) = match *rule {
                    SignalRule::CrossPresence { a, b } => (a, b, true),
                    SignalRule::PairedPresence { a, b } => (a, b, false),
                    _ => unreachable!(),
                };
                let (fa, fb) = match (cross, label == 1) {
                    (true, true) => self.pick(&[(false, false), (true, true)]),
                    (true, false) => self.pick(&[(true, false), (false, true)]),
                    (false, true) => (true, true),
                    (false, false) => self.pick(&[(true, false), (false, true), (false, false)]),
                };
                let len_a = self.len();
                let mut first = self.filler_seq(len_a, &[]);
                let len_b = self.len();
                let mut second = self.filler_seq(len_b, &[]);
                if fa {
                    self.plant(&mut first, &[a]);
                }
                if fb {
                    self.plant(&mut second, &[b]);
                }
                (first, Some(second))
            }
            SignalRule::SharedToken => {
                let len_a = self.len();
                let first = self.filler_seq(len_a, &[]);
                let len_b = self.len();
                let mut second = self.filler_seq(len_b, &first);
                if label == 1 {
                    let t = self.pick(&first);
                    self.plant(&mut second, &[t]);
                }
                (first, Some(second))
            }
            SignalRule::Density { .. } | SignalRule::Overlap => unreachable!("regression rule"),
        }
    }

    fn build_scalar(&mut self, rule: &SignalRule) -> (Vec<u32>, Option<Vec<u32>>) {
        match *rule {
            SignalRule::Density { token } => {
                let len = self.len();
                let k = self.rng.random_range(0..=len);
                let planted = vec![token; k];
                let mut seq = self.filler_seq(len, &[]);
                self.plant(&mut seq, &planted);
                (seq, None)
            }
            SignalRule::Overlap => {
                let len_a = self.len();
                let len_b = self.len();
                let mut distinct = self.fillers.clone();
                distinct.shuffle(&mut self.rng);
                let first: Vec<u32> = distinct[..len_a].to_vec();
                let k = self.rng.random_range(0..=len_a.min(len_b));
                let mut second: Vec<u32> = first[..k].to_vec();
                second.extend_from_slice(&distinct[len_a..len_a + len_b - k]);
                second.shuffle(&mut self.rng);
                (first, Some(second))
            }
            _ => unreachable!("classification rule"),
        }
    }
}

/// Generates the dataset described by `spec`. Classification labels are
/// assigned round-robin before shuffling, so clean labels are exactly
/// balanced; noise then replaces a label with a different random class
/// (or a uniform value in [0, 1] for regression) with probability
/// `noise_rate`.
pub fn generate_task(spec: &TaskSpec) -> Result<TaskDataset> {
    spec.validate()?;
    let planted = spec.rule.planted_tokens();
    let fillers: Vec<u32> = (FIRST_CONTENT..spec.vocab_size as u32)
        .filter(|t| !planted.contains(t))
        .collect();
    let mut b = Builder {
        spec,
        fillers,
        rng: ChaCha8Rng::seed_from_u64(spec.seed),
    };

    let n = spec.n_examples;
    let mut targets: Vec<u32> = match spec.kind() {
        TaskKind::Regression => vec![0; n],
        _ => (0..n).map(|i| (i % spec.n_classes()) as u32).collect(),
    };
    targets.shuffle(&mut b.rng);

    let mut examples = Vec::with_capacity(n);
    for (i, &target) in targets.iter().enumerate() {
        let (first, second) = match spec.kind() {
            TaskKind::Regression => b.build_scalar(&spec.rule),
            _ => b.build_class(&spec.rule, target),
        };
        let (tokens, segments) = match &second {
            Some(s) => pair_input(&first, s),
            None => single_input(&first),
        };
        let clean = spec.rule.evaluate(&tokens, &segments);
        let noisy = b.rng.random::<f64>() < spec.noise_rate;
        let label = match clean {
            RuleLabel::Class(c) => {
                debug_assert_eq!(c, target);
                if noisy {
                    let k = spec.n_classes() as u32;
                    Label::Class((c + b.rng.random_range(1..k)) % k)
                } else {
                    Label::Class(c)
                }
            }
            RuleLabel::Scalar(v) => {
                if noisy {
                    Label::Scalar(b.rng.random::<f64>())
                } else {
                    Label::Scalar(v)
                }
            }
        };
        examples.push(Example {
            id: i as u32,
            tokens,
            segments,
            label,
        });
    }

    let (train, valid, test) = split_indices(n, spec.seed);
    Ok(TaskDataset {
        spec: spec.clone(),
        examples,
        train,
        valid,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::MetricKind;

    #[test]
    fn presence_rule_holds_without_noise() {
        let spec = TaskSpec::new("p", SignalRule::Presence { token: 7 }, 300, 3);
        let ds = generate_task(&spec).unwrap();
        for ex in &ds.examples {
            let has = ex.tokens[1..].contains(&7);
            assert_eq!(ex.label, Label::Class(has as u32));
        }
    }

    #[test]
    fn deterministic_from_seed() {
        let spec = TaskSpec::new("p", SignalRule::SharedToken, 200, 11);
        assert_eq!(generate_task(&spec).unwrap(), generate_task(&spec).unwrap());
        let other = TaskSpec {
            seed: 12,
            ..spec.clone()
        };
        assert_ne!(
            generate_task(&spec).unwrap(),
            generate_task(&other).unwrap()
        );
    }

    #[test]
    fn split_sizes_follow_floor() {
        assert_eq!(split_sizes(1000), (800, 100, 100));
        assert_eq!(split_sizes(39), (33, 3, 3));
        let spec = TaskSpec::new("p", SignalRule::Presence { token: 7 }, 1000, 3);
        let ds = generate_task(&spec).unwrap();
        assert_eq!(
            (ds.train.len(), ds.valid.len(), ds.test.len()),
            (800, 100, 100)
        );
    }

    #[test]
    fn too_small_rejected() {
        let spec = TaskSpec::new("p", SignalRule::Presence { token: 7 }, 20, 3);
        assert!(matches!(generate_task(&spec), Err(Error::Data(_))));
    }

    #[test]
    fn classes_balanced_with_noise() {
        for rule in [
            SignalRule::AnyOf { a: 5, b: 6 },
            SignalRule::CountOf { a: 5, b: 6 },
            SignalRule::CrossPresence { a: 5, b: 6 },
        ] {
            let mut spec = TaskSpec::new("b", rule, 1000, 9);
            spec.noise_rate = 0.2;
            let ds = generate_task(&spec).unwrap();
            let k = spec.n_classes();
            let mut counts = vec![0usize; k];
            for ex in &ds.examples {
                counts[ex.label.class().unwrap() as usize] += 1;
            }
            for c in counts {
                let share = c as f64 / 1000.0;
                assert!((share - 1.0 / k as f64).abs() <= 0.05, "{share}");
            }
        }
    }

    #[test]
    fn regression_labels_in_unit_interval() {
        for rule in [SignalRule::Density { token: 9 }, SignalRule::Overlap] {
            let mut spec = TaskSpec::new("r", rule, 300, 2);
            spec.noise_rate = 0.1;
            assert_eq!(spec.metric, MetricKind::Pearson);
            let ds = generate_task(&spec).unwrap();
            assert!(ds
                .examples
                .iter()
                .all(|e| (0.0..=1.0).contains(&e.label.scalar())));
        }
    }

    #[test]
    fn sequences_fit_declared_length() {
        for rule in [
            SignalRule::SharedToken,
            SignalRule::Overlap,
            SignalRule::AnyOf { a: 4, b: 5 },
        ] {
            let spec = TaskSpec::new("l", rule, 200, 1);
            let ds = generate_task(&spec).unwrap();
            assert!(ds
                .examples
                .iter()
                .all(|e| e.tokens.len() <= spec.max_tokens()));
        }
    }
}
