//! Plain-text run configuration: `key = value` lines, `#` comments.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::encoder::{EncoderConfig, PretrainOptions};
use crate::error::{Error, Result};
use crate::finetune::{FineTuneConfig, Pooling};
use crate::probe::SampleMode;
use crate::tasks::{MetricKind, SignalRule, TaskSpec};

/// Every setting of an experiment. Rendering with [`RunConfig::to_text`]
/// and parsing the result reproduces the same value.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub experiment: String,
    pub seed: u64,

    pub vocab_size: usize,
    pub max_len: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub encoder_dropout: f64,
    pub init_std: f64,

    pub pretrain_steps: usize,
    pub pretrain_batch: usize,
    pub pretrain_lr: f64,
    pub mask_fraction: f64,
    pub corpus_sequences: usize,
    pub corpus_min_len: usize,
    pub corpus_max_len: usize,
    /// Load encoder weights from this container instead of pretraining.
    pub weights: Option<PathBuf>,

    pub task_name: String,
    pub task_rule: SignalRule,
    pub task_examples: usize,
    pub task_noise: f64,
    pub metric: Option<MetricKind>,
    pub target_name: String,
    pub target_rule: SignalRule,
    pub target_examples: usize,
    pub target_noise: f64,

    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub dropout_rate: f64,
    pub pooling: Pooling,
    pub freeze_encoder: bool,
    pub head_depth: usize,
    /// Probe this fine-tuned model container instead of training one.
    pub model: Option<PathBuf>,

    pub subset_size: usize,
    pub sample_mode: SampleModeName,
    pub sample_rate: f64,
    pub sample_count: u64,
    /// Ranked rows kept per report; 0 keeps all.
    pub report_top: usize,
    pub top_triples: usize,
    pub effective_dims: usize,
    pub layer_top: usize,
    pub threshold: f64,
    pub dump: Option<PathBuf>,
    pub results: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleModeName {
    Exhaustive,
    Rate,
    Count,
}

impl SampleModeName {
    fn as_str(self) -> &'static str {
        match self {
            SampleModeName::Exhaustive => "exhaustive",
            SampleModeName::Rate => "rate",
            SampleModeName::Count => "count",
        }
    }
}

impl FromStr for SampleModeName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exhaustive" => Ok(SampleModeName::Exhaustive),
            "rate" => Ok(SampleModeName::Rate),
            "count" => Ok(SampleModeName::Count),
            other => Err(Error::Config(format!("unknown sample_mode {other:?}"))),
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        let enc = EncoderConfig::default();
        let pre = PretrainOptions::default();
        let ft = FineTuneConfig::default();
        Self {
            experiment: String::new(),
            seed: 42,
            vocab_size: enc.vocab_size,
            max_len: enc.max_len,
            d_model: enc.d_model,
            n_layers: enc.n_layers,
            n_heads: enc.n_heads,
            d_ff: enc.d_ff,
            encoder_dropout: enc.dropout_rate,
            init_std: enc.init_std,
            pretrain_steps: pre.steps,
            pretrain_batch: pre.batch_size,
            pretrain_lr: pre.lr,
            mask_fraction: pre.mask_fraction,
            corpus_sequences: 2_000,
            corpus_min_len: 4,
            corpus_max_len: 16,
            weights: None,
            task_name: "planted".into(),
            task_rule: SignalRule::AnyOf { a: 5, b: 9 },
            task_examples: 2_000,
            task_noise: 0.0,
            metric: None,
            target_name: "target".into(),
            target_rule: SignalRule::PairedPresence { a: 5, b: 9 },
            target_examples: 2_000,
            target_noise: 0.0,
            learning_rate: ft.learning_rate,
            batch_size: ft.batch_size,
            max_epochs: ft.max_epochs,
            dropout_rate: ft.dropout_rate,
            pooling: ft.pooling,
            freeze_encoder: ft.freeze_encoder,
            head_depth: ft.head_depth,
            model: None,
            subset_size: 2,
            sample_mode: SampleModeName::Exhaustive,
            sample_rate: 0.01,
            sample_count: 100,
            report_top: 0,
            top_triples: crate::probe::TOP_TRIPLES,
            effective_dims: crate::probe::EFFECTIVE_DIMS,
            layer_top: 5,
            threshold: 0.9,
            dump: None,
            results: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!(
            "{key}: expected true or false, got {value:?}"
        ))),
    }
}

fn parse_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn check_id(key: &str, value: &str) -> Result<String> {
    if value
        .chars()
        .any(|c| c == ',' || c == '"' || c.is_control())
    {
        return Err(Error::Config(format!(
            "{key}: {value:?} may not contain commas or quotes"
        )));
    }
    Ok(value.to_string())
}

fn rule(key: &str, value: &str) -> Result<SignalRule> {
    value
        .parse()
        .map_err(|e: Error| Error::Config(format!("{key}: {e}")))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: {key} set twice", n + 1)));
            }
            cfg.set(key, value).map_err(|e| {
                Error::Config(format!(
                    "line {}: {}",
                    n + 1,
                    e.to_string().trim_start_matches("configuration error: ")
                ))
            })?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "experiment" => self.experiment = check_id(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "vocab_size" => self.vocab_size = parse(key, v)?,
            "max_len" => self.max_len = parse(key, v)?,
            "d_model" => self.d_model = parse(key, v)?,
            "n_layers" => self.n_layers = parse(key, v)?,
            "n_heads" => self.n_heads = parse(key, v)?,
            "d_ff" => self.d_ff = parse(key, v)?,
            "encoder_dropout" => self.encoder_dropout = parse(key, v)?,
            "init_std" => self.init_std = parse(key, v)?,
            "pretrain_steps" => self.pretrain_steps = parse(key, v)?,
            "pretrain_batch" => self.pretrain_batch = parse(key, v)?,
            "pretrain_lr" => self.pretrain_lr = parse(key, v)?,
            "mask_fraction" => self.mask_fraction = parse(key, v)?,
            "corpus_sequences" => self.corpus_sequences = parse(key, v)?,
            "corpus_min_len" => self.corpus_min_len = parse(key, v)?,
            "corpus_max_len" => self.corpus_max_len = parse(key, v)?,
            "weights" => self.weights = parse_path(v),
            "task_name" => self.task_name = check_id(key, v)?,
            "task_rule" => self.task_rule = rule(key, v)?,
            "task_examples" => self.task_examples = parse(key, v)?,
            "task_noise" => self.task_noise = parse(key, v)?,
            "metric" => {
                self.metric = if v.is_empty() {
                    None
                } else {
                    Some(
                        v.parse()
                            .map_err(|e: Error| Error::Config(format!("{key}: {e}")))?,
                    )
                }
            }
            "target_name" => self.target_name = check_id(key, v)?,
            "target_rule" => self.target_rule = rule(key, v)?,
            "target_examples" => self.target_examples = parse(key, v)?,
            "target_noise" => self.target_noise = parse(key, v)?,
            "learning_rate" => self.learning_rate = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "max_epochs" => self.max_epochs = parse(key, v)?,
            "dropout_rate" => self.dropout_rate = parse(key, v)?,
            "pooling" => self.pooling = v.parse()?,
            "freeze_encoder" => self.freeze_encoder = parse_bool(key, v)?,
            "head_depth" => self.head_depth = parse(key, v)?,
            "model" => self.model = parse_path(v),
            "subset_size" => self.subset_size = parse(key, v)?,
            "sample_mode" => self.sample_mode = v.parse()?,
            "sample_rate" => self.sample_rate = parse(key, v)?,
            "sample_count" => self.sample_count = parse(key, v)?,
            "report_top" => self.report_top = parse(key, v)?,
            "top_triples" => self.top_triples = parse(key, v)?,
            "effective_dims" => self.effective_dims = parse(key, v)?,
            "layer_top" => self.layer_top = parse(key, v)?,
            "threshold" => self.threshold = parse(key, v)?,
            "dump" => self.dump = parse_path(v),
            "results" => self.results = parse_path(v),
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Every key with its resolved value, one per line.
    pub fn to_text(&self) -> String {
        let path = |p: &Option<PathBuf>| {
            p.as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default()
        };
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("experiment", self.experiment.clone());
        kv("seed", self.seed.to_string());
        kv("vocab_size", self.vocab_size.to_string());
        kv("max_len", self.max_len.to_string());
        kv("d_model", self.d_model.to_string());
        kv("n_layers", self.n_layers.to_string());
        kv("n_heads", self.n_heads.to_string());
        kv("d_ff", self.d_ff.to_string());
        kv("encoder_dropout", self.encoder_dropout.to_string());
        kv("init_std", self.init_std.to_string());
        kv("pretrain_steps", self.pretrain_steps.to_string());
        kv("pretrain_batch", self.pretrain_batch.to_string());
        kv("pretrain_lr", self.pretrain_lr.to_string());
        kv("mask_fraction", self.mask_fraction.to_string());
        kv("corpus_sequences", self.corpus_sequences.to_string());
        kv("corpus_min_len", self.corpus_min_len.to_string());
        kv("corpus_max_len", self.corpus_max_len.to_string());
        kv("weights", path(&self.weights));
        kv("task_name", self.task_name.clone());
        kv("task_rule", self.task_rule.to_string());
        kv("task_examples", self.task_examples.to_string());
        kv("task_noise", self.task_noise.to_string());
        kv(
            "metric",
            self.metric.map(|m| m.to_string()).unwrap_or_default(),
        );
        kv("target_name", self.target_name.clone());
        kv("target_rule", self.target_rule.to_string());
        kv("target_examples", self.target_examples.to_string());
        kv("target_noise", self.target_noise.to_string());
        kv("learning_rate", self.learning_rate.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("max_epochs", self.max_epochs.to_string());
        kv("dropout_rate", self.dropout_rate.to_string());
        kv("pooling", self.pooling.to_string());
        kv("freeze_encoder", self.freeze_encoder.to_string());
        kv("head_depth", self.head_depth.to_string());
        kv("model", path(&self.model));
        kv("subset_size", self.subset_size.to_string());
        kv("sample_mode", self.sample_mode.as_str().to_string());
        kv("sample_rate", self.sample_rate.to_string());
        kv("sample_count", self.sample_count.to_string());
        kv("report_top", self.report_top.to_string());
        kv("top_triples", self.top_triples.to_string());
        kv("effective_dims", self.effective_dims.to_string());
        kv("layer_top", self.layer_top.to_string());
        kv("threshold", self.threshold.to_string());
        kv("dump", path(&self.dump));
        kv("results", path(&self.results));
        s
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            vocab_size: self.vocab_size,
            max_len: self.max_len,
            d_model: self.d_model,
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            d_ff: self.d_ff,
            dropout_rate: self.encoder_dropout,
            init_std: self.init_std,
            seed: self.seed,
        }
    }

    pub fn pretrain_options(&self) -> PretrainOptions {
        PretrainOptions {
            steps: self.pretrain_steps,
            batch_size: self.pretrain_batch,
            mask_fraction: self.mask_fraction,
            lr: self.pretrain_lr,
            seed: self.seed,
        }
    }

    fn spec(&self, name: &str, rule: &SignalRule, n: usize, noise: f64) -> TaskSpec {
        let mut spec = TaskSpec::new(name, rule.clone(), n, self.seed);
        spec.noise_rate = noise;
        spec.vocab_size = self.vocab_size;
        if let Some(m) = self.metric {
            spec.metric = m;
        }
        spec
    }

    pub fn task_spec(&self) -> TaskSpec {
        self.spec(
            &self.task_name,
            &self.task_rule,
            self.task_examples,
            self.task_noise,
        )
    }

    pub fn target_spec(&self) -> TaskSpec {
        self.spec(
            &self.target_name,
            &self.target_rule,
            self.target_examples,
            self.target_noise,
        )
    }

    pub fn finetune_config(&self) -> FineTuneConfig {
        FineTuneConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            dropout_rate: self.dropout_rate,
            seed: self.seed,
            pooling: self.pooling,
            freeze_encoder: self.freeze_encoder,
            head_depth: self.head_depth,
        }
    }

    pub fn sample_mode(&self) -> SampleMode {
        match self.sample_mode {
            SampleModeName::Exhaustive => SampleMode::Exhaustive,
            SampleModeName::Rate => SampleMode::Rate(self.sample_rate),
            SampleModeName::Count => SampleMode::Count(self.sample_count),
        }
    }

    /// Checks every derived configuration without running anything.
    pub fn validate(&self) -> Result<()> {
        self.encoder_config().validate()?;
        self.finetune_config().validate()?;
        let p = self.pretrain_options();
        if !(p.mask_fraction > 0.0 && p.mask_fraction < 1.0) {
            return Err(Error::Config(format!(
                "mask_fraction {} outside (0, 1)",
                p.mask_fraction
            )));
        }
        if self.corpus_min_len == 0
            || self.corpus_min_len > self.corpus_max_len
            || self.corpus_max_len + 1 > self.max_len
        {
            return Err(Error::Config(format!(
                "corpus lengths {}..={} must be positive and fit max_len {} after CLS",
                self.corpus_min_len, self.corpus_max_len, self.max_len
            )));
        }
        if self.subset_size == 0 || self.subset_size > self.d_model {
            return Err(Error::Config(format!(
                "subset_size {} outside 1..={}",
                self.subset_size, self.d_model
            )));
        }
        Ok(())
    }
}
