//! Fine-tuning of encoder + head, and head-only training on stored vectors.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::head::{init_head, Head};
use crate::encoder::{encode, maybe_dropout, Dropout, EncoderVars, EncoderWeights, PAD};
use crate::error::{Error, Result};
use crate::numerics::{sgd_step, Matrix, Tape, Var, CLIP_NORM};
use crate::probe::{maxpool_position_in, FeatureRow, FeatureTable, LabelKind};
use crate::tasks::{
    accuracy, matthews, pearson, Label, MetricKind, Score, Split, TaskDataset, TaskKind, TaskSpec,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pooling {
    Cls,
    MaxPool,
}

impl Pooling {
    pub fn as_str(self) -> &'static str {
        match self {
            Pooling::Cls => "cls",
            Pooling::MaxPool => "maxpool",
        }
    }
}

impl fmt::Display for Pooling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cls" => Ok(Pooling::Cls),
            "maxpool" => Ok(Pooling::MaxPool),
            other => Err(Error::Config(format!("unknown pooling {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FineTuneConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub dropout_rate: f64,
    pub seed: u64,
    pub pooling: Pooling,
    pub freeze_encoder: bool,
    pub head_depth: usize,
}

/// Step size for plain gradient descent on the desk-scale encoder. Smaller
/// steps leave a pretrained encoder short of the planted signal within the
/// default five epochs.
pub const DEFAULT_LEARNING_RATE: f64 = 0.1;

impl Default for FineTuneConfig {
    fn default() -> Self {
        Self {
            learning_rate: DEFAULT_LEARNING_RATE,
            batch_size: 32,
            max_epochs: 5,
            dropout_rate: 0.1,
            seed: 42,
            pooling: Pooling::Cls,
            freeze_encoder: false,
            head_depth: 1,
        }
    }
}

impl FineTuneConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!(
                "learning_rate {} must be positive",
                self.learning_rate
            ));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return fail("batch_size and max_epochs must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return fail(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        match (self.head_depth, self.freeze_encoder) {
            (1, _) | (2, true) => Ok(()),
            (2, false) => fail("a two-stage head is only trained on a frozen encoder".into()),
            (d, _) => fail(format!("head_depth {d} is not 1 or 2")),
        }
    }
}

/// What a model was trained to predict.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskInfo {
    pub name: String,
    pub kind: TaskKind,
    pub n_classes: usize,
    pub metric: MetricKind,
}

impl From<&TaskSpec> for TaskInfo {
    fn from(spec: &TaskSpec) -> Self {
        Self {
            name: spec.name.clone(),
            kind: spec.kind(),
            n_classes: spec.n_classes(),
            metric: spec.metric,
        }
    }
}

impl TaskInfo {
    pub fn n_out(&self) -> usize {
        if self.kind.is_classification() {
            self.n_classes
        } else {
            1
        }
    }
}

/// Encoder (absent for dump-backed models), head, and full provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct FineTunedModel {
    pub encoder: Option<EncoderWeights>,
    pub head: Head,
    pub task: TaskInfo,
    pub pooling: Pooling,
    pub config: FineTuneConfig,
    /// Seed the head was initialised from.
    pub head_seed: u64,
    /// Valid score after each epoch.
    pub history: Vec<Score>,
    /// Zero-based epoch whose weights were kept.
    pub best_epoch: usize,
}

impl FineTunedModel {
    pub fn metric(&self) -> MetricKind {
        self.task.metric
    }

    pub fn encoder(&self) -> Result<&EncoderWeights> {
        self.encoder.as_ref().ok_or_else(|| {
            Error::Data("model is backed by an activation dump and has no encoder".into())
        })
    }
}

/// Predicted class (argmax, lowest index on ties) for a logit vector.
pub fn argmax(outputs: &[f64]) -> u32 {
    let mut best = 0;
    for (i, &v) in outputs.iter().enumerate() {
        if v > outputs[best] {
            best = i;
        }
    }
    best as u32
}

/// Scores raw head outputs against gold labels under `metric`.
pub fn score_outputs(metric: MetricKind, outputs: &[Vec<f64>], gold: &[Label]) -> Result<Score> {
    if gold.is_empty() {
        return Err(Error::Data("cannot score an empty split".into()));
    }
    match metric {
        MetricKind::Pearson => {
            let pred: Vec<f64> = outputs.iter().map(|o| o[0]).collect();
            let gold: Vec<f64> = gold.iter().map(|l| l.scalar()).collect();
            pearson(&pred, &gold)
        }
        MetricKind::Accuracy | MetricKind::Matthews => {
            let pred: Vec<u32> = outputs.iter().map(|o| argmax(o)).collect();
            let gold = gold
                .iter()
                .map(|l| {
                    l.class().ok_or_else(|| {
                        Error::Domain("scalar label under a classification metric".into())
                    })
                })
                .collect::<Result<Vec<u32>>>()?;
            let v = if metric == MetricKind::Accuracy {
                accuracy(&pred, &gold)?
            } else {
                matthews(&pred, &gold)?
            };
            Ok(Score::new(v))
        }
    }
}

pub(crate) fn pooled_input(row: &FeatureRow, pooling: Pooling) -> Vec<f64> {
    let v = match pooling {
        Pooling::Cls => row.levels.last().expect("at least one level"),
        Pooling::MaxPool => &row.maxpool,
    };
    v.iter().map(|&x| x as f64).collect()
}

/// Score of `head` on the pooled vectors of one split of `table`.
pub fn score_table(
    head: &Head,
    table: &FeatureTable,
    split: Split,
    pooling: Pooling,
    metric: MetricKind,
) -> Result<Score> {
    let rows: Vec<&FeatureRow> = table.rows_in(split).collect();
    let outputs: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| head.forward_vec(&pooled_input(r, pooling)))
        .collect();
    let gold: Vec<Label> = rows.iter().map(|r| r.label).collect();
    score_outputs(metric, &outputs, &gold)
}

fn record_loss(tape: &mut Tape, logits: Var, labels: &[Label], info: &TaskInfo) -> Result<Var> {
    if info.kind.is_classification() {
        let targets = labels
            .iter()
            .map(|l| {
                l.class()
                    .map(|c| c as usize)
                    .ok_or_else(|| Error::Domain("scalar label in a classification task".into()))
            })
            .collect::<Result<Vec<_>>>()?;
        tape.cross_entropy(logits, &targets)
    } else {
        let targets: Vec<f64> = labels.iter().map(|l| l.scalar()).collect();
        tape.mse(logits, &targets)
    }
}

fn check_compatible(weights: &EncoderWeights, task: &TaskDataset) -> Result<()> {
    let cfg = weights.config();
    if task.spec.max_tokens() > cfg.max_len || task.spec.vocab_size > cfg.vocab_size {
        return Err(Error::Dimension(format!(
            "task {} needs max_len {} and vocab {}, encoder has {} and {}",
            task.spec.name,
            task.spec.max_tokens(),
            task.spec.vocab_size,
            cfg.max_len,
            cfg.vocab_size
        )));
    }
    Ok(())
}

struct BestTracker<T> {
    best: Option<(Score, usize, T)>,
    history: Vec<Score>,
}

impl<T> BestTracker<T> {
    fn new() -> Self {
        Self {
            best: None,
            history: Vec::new(),
        }
    }

    /// Keeps the first epoch with the highest valid score.
    fn offer(&mut self, epoch: usize, score: Score, snapshot: impl FnOnce() -> T) {
        self.history.push(score);
        let better = match &self.best {
            None => true,
            Some((b, _, _)) => score.rank_cmp(b).is_gt(),
        };
        if better {
            self.best = Some((score, epoch, snapshot()));
        }
    }

    fn finish(self) -> (T, usize, Vec<Score>) {
        let (_, epoch, snap) = self.best.expect("at least one epoch");
        (snap, epoch, self.history)
    }
}

/// Fine-tunes on the train split and keeps the epoch with the best valid
/// score. With `freeze_encoder`, only the head is trained, on vectors
/// extracted once from the unchanged encoder.
pub fn finetune(
    weights: &EncoderWeights,
    task: &TaskDataset,
    cfg: &FineTuneConfig,
) -> Result<FineTunedModel> {
    finetune_with_head_seed(weights, task, cfg, cfg.seed)
}

pub(crate) fn finetune_with_head_seed(
    weights: &EncoderWeights,
    task: &TaskDataset,
    cfg: &FineTuneConfig,
    head_seed: u64,
) -> Result<FineTunedModel> {
    cfg.validate()?;
    check_compatible(weights, task)?;
    let info = TaskInfo::from(&task.spec);
    let head = init_head(
        weights.config().d_model,
        info.n_out(),
        cfg.head_depth,
        head_seed,
    )?;

    if cfg.freeze_encoder {
        let table = FeatureTable::from_model(weights, task, Some(&[Split::Train, Split::Valid]))?;
        let (head, best_epoch, history) = fit_head(&table, head, cfg, &info)?;
        return Ok(FineTunedModel {
            encoder: Some(weights.clone()),
            head,
            task: info,
            pooling: cfg.pooling,
            config: cfg.clone(),
            head_seed,
            history,
            best_epoch,
        });
    }

    let mut encoder = weights.clone();
    let mut head = head;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order = task.train.clone();
    let mut tracker = BestTracker::new();

    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let vars = EncoderVars::record(&mut tape, &encoder, true);
            let mut pooled = Vec::with_capacity(batch.len());
            let mut labels = Vec::with_capacity(batch.len());
            for &i in batch {
                let ex = &task.examples[i];
                let mut dropout = Dropout::new(cfg.dropout_rate, rng.random());
                let levels = encode(
                    &mut tape,
                    &encoder,
                    &vars,
                    &ex.tokens,
                    &ex.segments,
                    &mut dropout,
                )?;
                let last = *levels.last().expect("levels");
                let pos = match cfg.pooling {
                    Pooling::Cls => 0,
                    Pooling::MaxPool => {
                        let mask: Vec<bool> = ex.tokens.iter().map(|&t| t != PAD).collect();
                        maxpool_position_in(tape.value(last), &mask)?
                    }
                };
                let row = tape.gather_rows(last, &[pos])?;
                pooled.push(maybe_dropout(&mut tape, &mut dropout, row)?);
                labels.push(ex.label);
            }
            let input = tape.concat_rows(&pooled)?;
            let logits = head.record(&mut tape, input)?;
            let loss = record_loss(&mut tape, logits, &labels, &info)?;
            if !tape.value(loss).get(0, 0).is_finite() {
                return Err(Error::Training {
                    epoch,
                    detail: "non-finite loss".into(),
                });
            }
            let grads = tape.backward(loss)?;
            sgd_step(
                &mut [encoder.params_mut(), head.params_mut()],
                &grads,
                cfg.learning_rate,
                CLIP_NORM,
            )
            .map_err(|e| Error::Training {
                epoch,
                detail: e.to_string(),
            })?;
        }
        let table = FeatureTable::from_model(&encoder, task, Some(&[Split::Valid]))?;
        let score = score_table(&head, &table, Split::Valid, cfg.pooling, info.metric)?;
        tracker.offer(epoch, score, || (encoder.clone(), head.clone()));
    }

    let ((encoder, head), best_epoch, history) = tracker.finish();
    Ok(FineTunedModel {
        encoder: Some(encoder),
        head,
        task: info,
        pooling: cfg.pooling,
        config: cfg.clone(),
        head_seed,
        history,
        best_epoch,
    })
}

/// Trains `head` on stored pooled vectors of the train split.
fn fit_head(
    table: &FeatureTable,
    mut head: Head,
    cfg: &FineTuneConfig,
    info: &TaskInfo,
) -> Result<(Head, usize, Vec<Score>)> {
    let train: Vec<&FeatureRow> = table.rows_in(Split::Train).collect();
    if train.is_empty() {
        return Err(Error::Data("no training rows".into()));
    }
    let inputs: Vec<Vec<f64>> = train.iter().map(|r| pooled_input(r, cfg.pooling)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut tracker = BestTracker::new();
    let d = table.d_model;

    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let data: Vec<f64> = batch
                .iter()
                .flat_map(|&i| inputs[i].iter().copied())
                .collect();
            let x = tape.constant(Matrix::from_vec(batch.len(), d, data)?);
            let mut dropout = Dropout::new(cfg.dropout_rate, rng.random());
            let x = maybe_dropout(&mut tape, &mut dropout, x)?;
            let labels: Vec<Label> = batch.iter().map(|&i| train[i].label).collect();
            let logits = head.record(&mut tape, x)?;
            let loss = record_loss(&mut tape, logits, &labels, info)?;
            if !tape.value(loss).get(0, 0).is_finite() {
                return Err(Error::Training {
                    epoch,
                    detail: "non-finite loss".into(),
                });
            }
            let grads = tape.backward(loss)?;
            sgd_step(
                &mut [head.params_mut()],
                &grads,
                cfg.learning_rate,
                CLIP_NORM,
            )?;
        }
        let score = score_table(&head, table, Split::Valid, cfg.pooling, info.metric)?;
        tracker.offer(epoch, score, || head.clone());
    }
    Ok(tracker.finish())
}

/// Trains a head directly on an activation table (for example one read
/// from an exported dump). The resulting model has no encoder.
pub fn train_head_on_dump(
    table: &FeatureTable,
    cfg: &FineTuneConfig,
    task_name: &str,
    metric: MetricKind,
) -> Result<FineTunedModel> {
    table.validate()?;
    if !table.split_coded {
        return Err(Error::Data("dump has no split assignment".into()));
    }
    let kind = match (table.label_kind, metric) {
        (LabelKind::Scalar, MetricKind::Pearson) => TaskKind::Regression,
        (LabelKind::Class, MetricKind::Accuracy) => TaskKind::SingleCls,
        (LabelKind::Class, MetricKind::Matthews) if table.n_classes == 2 => TaskKind::SingleCls,
        (kind, m) => {
            return Err(Error::Domain(format!(
                "metric {m} does not apply to {} labels with {} classes",
                if kind == LabelKind::Scalar {
                    "scalar"
                } else {
                    "class"
                },
                table.n_classes
            )))
        }
    };
    let cfg = FineTuneConfig {
        freeze_encoder: true,
        ..cfg.clone()
    };
    cfg.validate()?;
    let info = TaskInfo {
        name: task_name.to_string(),
        kind,
        n_classes: if kind == TaskKind::Regression {
            0
        } else {
            table.n_classes as usize
        },
        metric,
    };
    let head = init_head(table.d_model, info.n_out(), cfg.head_depth, cfg.seed)?;
    let (head, best_epoch, history) = fit_head(table, head, &cfg, &info)?;
    Ok(FineTunedModel {
        encoder: None,
        head,
        task: info,
        pooling: cfg.pooling,
        head_seed: cfg.seed,
        config: cfg,
        history,
        best_epoch,
    })
}
