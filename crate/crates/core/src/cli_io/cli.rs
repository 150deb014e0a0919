//! Command-line front end. Every subcommand resolves a [`RunConfig`],
//! writes it to `provenance.cfg` in the output directory, and places all
//! outputs there.

use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use super::codecs::{
    decode_activations, decode_model, decode_task, decode_weights, encode_activations,
    encode_model, encode_task, encode_weights,
};
use super::config::RunConfig;
use super::container::{read_container, single_section, write_container, SectionTag};
use super::results::{
    emit_histogram_svg, emit_results_csv, parse_results_csv, report_rows, ResultRow,
};
use crate::encoder::{pretrain_mlm, EncoderWeights};
use crate::error::{Error, Result};
use crate::finetune::{
    baseline_scores, cross_finetune, finetune, freeze_compare, train_head_on_dump, FineTuneConfig,
    FineTunedModel, Pooling,
};
use crate::probe::{
    consistent_error_set, dropout_ablation, effective_dims, enumerate_or_sample_subsets,
    layer_sweep, maxpool_position, pair_combinations, sweep_sample, FeatureTable, LabelKind,
    ProbeReport, Prober, SubsetSample, ERROR_SUBSETS,
};
use crate::tasks::{bigram_corpus, generate_task, MetricKind, Score, Split, TaskDataset};

#[derive(Parser, Debug)]
#[command(
    name = "clsprobe",
    about = "Fine-tune a small encoder and probe which token, dimensions and layers carry the task signal"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Run configuration file (`key = value` lines)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Masked-token pretraining; writes weights.rpb
    Pretrain(RunArgs),
    /// Fine-tune on the configured task; writes model.rpb
    Finetune(RunArgs),
    /// Score dimension subsets at the final level
    ProbeDims(RunArgs),
    /// Find effective dimensions from the best 3-dimension sets
    ProbeEffective(RunArgs),
    /// Score the same subsets at every level
    ProbeLayers(RunArgs),
    /// Compare CLS and MaxPooling sentence vectors
    ProbeToken(RunArgs),
    /// Fine-tune on the task, then on the target task with a fresh head
    Cross(RunArgs),
    /// Compare a trained encoder with a frozen one under a two-stage head
    Freeze(RunArgs),
    /// Fine-tune with and without dropout and compare subset scores
    DropoutAblate(RunArgs),
    /// Test examples every top subset gets wrong but all dimensions get right
    Errors(RunArgs),
    /// Write per-level CLS and MaxPooling vectors to activations.rpb
    DumpExport(RunArgs),
    /// Train a head on an activation dump and score subsets
    DumpProbe(RunArgs),
    /// Summarise a results table
    Report(RunArgs),
}

impl Command {
    fn split(self) -> (&'static str, RunArgs) {
        match self {
            Command::Pretrain(a) => ("pretrain", a),
            Command::Finetune(a) => ("finetune", a),
            Command::ProbeDims(a) => ("probe-dims", a),
            Command::ProbeEffective(a) => ("probe-effective", a),
            Command::ProbeLayers(a) => ("probe-layers", a),
            Command::ProbeToken(a) => ("probe-token", a),
            Command::Cross(a) => ("cross", a),
            Command::Freeze(a) => ("freeze", a),
            Command::DropoutAblate(a) => ("dropout-ablate", a),
            Command::Errors(a) => ("errors", a),
            Command::DumpExport(a) => ("dump-export", a),
            Command::DumpProbe(a) => ("dump-probe", a),
            Command::Report(a) => ("report", a),
        }
    }
}

/// Parses `argv` (program name first), runs the command, and returns the
/// process exit code. Diagnostics go to standard error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let (name, args) = cli.command.split();
    match execute(name, &args) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("clsprobe {name}: {e}");
            e.exit_code()
        }
    }
}

struct DirLock {
    path: PathBuf,
}

impl DirLock {
    fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(".lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Usage(format!(
                "{} is in use by another run (remove {} if that run is gone)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn resolve_config(name: &str, args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if cfg.experiment.is_empty() {
        cfg.experiment = name.to_string();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(name: &str, args: &RunArgs) -> Result<()> {
    let cfg = resolve_config(name, args)?;
    let out = &args.out;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let _lock = DirLock::acquire(out)?;
    let provenance = format!("# clsprobe {name}\n{}", cfg.to_text());
    write_text(out.join("provenance.cfg"), &provenance)?;
    let ctx = Ctx { cfg: &cfg, out };
    match name {
        "pretrain" => ctx.pretrain(),
        "finetune" => ctx.finetune(),
        "probe-dims" => ctx.probe_dims(),
        "probe-effective" => ctx.probe_effective(),
        "probe-layers" => ctx.probe_layers(),
        "probe-token" => ctx.probe_token(),
        "cross" => ctx.cross(),
        "freeze" => ctx.freeze(),
        "dropout-ablate" => ctx.dropout_ablate(),
        "errors" => ctx.errors(),
        "dump-export" => ctx.dump_export(),
        "dump-probe" => ctx.dump_probe(),
        "report" => ctx.report(),
        other => Err(Error::Usage(format!("unknown subcommand {other:?}"))),
    }
}

fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn truncate(report: ProbeReport, top: usize) -> ProbeReport {
    if top == 0 {
        report
    } else {
        report.truncated(top)
    }
}

fn baseline_row(
    experiment: &str,
    task: &str,
    layer: usize,
    scores: (Score, Score),
    metric: MetricKind,
) -> ResultRow {
    ResultRow {
        experiment: experiment.to_string(),
        task: task.to_string(),
        layer,
        subset: None,
        rank: 0,
        valid: scores.0,
        test: scores.1,
        metric,
    }
}

/// Experiment, task and layer of a results row.
type GroupKey = (String, String, usize);

struct Ctx<'a> {
    cfg: &'a RunConfig,
    out: &'a Path,
}

impl Ctx<'_> {
    fn path(&self, file: &str) -> PathBuf {
        self.out.join(file)
    }

    fn sub(&self, arm: &str) -> String {
        format!("{}:{arm}", self.cfg.experiment)
    }

    fn encoder(&self) -> Result<(EncoderWeights, Vec<f64>)> {
        if let Some(p) = &self.cfg.weights {
            let sections = read_container(p)?;
            return Ok((
                decode_weights(single_section(&sections, SectionTag::Weights)?)?,
                Vec::new(),
            ));
        }
        let mut w = EncoderWeights::init(&self.cfg.encoder_config())?;
        let corpus = bigram_corpus(
            self.cfg.vocab_size,
            self.cfg.corpus_sequences,
            (self.cfg.corpus_min_len, self.cfg.corpus_max_len),
            self.cfg.seed,
        )?;
        let history = pretrain_mlm(&mut w, &corpus, &self.cfg.pretrain_options())?;
        Ok((w, history))
    }

    fn task(&self) -> Result<TaskDataset> {
        generate_task(&self.cfg.task_spec())
    }

    fn finetune_cfg(&self) -> FineTuneConfig {
        self.cfg.finetune_config()
    }

    /// A stored model and its task, or a freshly fine-tuned one.
    fn model(&self) -> Result<(FineTunedModel, TaskDataset)> {
        if let Some(p) = &self.cfg.model {
            let sections = read_container(p)?;
            let model = decode_model(single_section(&sections, SectionTag::Model)?)?;
            let task = decode_task(single_section(&sections, SectionTag::Task)?)?;
            return Ok((model, task));
        }
        let (enc, _) = self.encoder()?;
        let task = self.task()?;
        let model = finetune(&enc, &task, &self.finetune_cfg())?;
        Ok((model, task))
    }

    fn sample(&self, d_model: usize, k: usize) -> Result<SubsetSample> {
        enumerate_or_sample_subsets(d_model, k, self.cfg.sample_mode(), self.cfg.seed)
    }

    fn save_model(&self, model: &FineTunedModel, task: &TaskDataset) -> Result<()> {
        write_container(
            self.path("model.rpb"),
            &[encode_model(model)?, encode_task(task)?],
        )
    }

    fn pretrain(&self) -> Result<()> {
        if self.cfg.weights.is_some() {
            return Err(Error::Config(
                "pretrain starts from fresh weights; unset `weights`".into(),
            ));
        }
        let (w, history) = self.encoder()?;
        write_container(self.path("weights.rpb"), &[encode_weights(&w)?])?;
        let mut s = String::from("step,loss\n");
        for (i, l) in history.iter().enumerate() {
            let _ = writeln!(s, "{i},{l}");
        }
        write_text(self.path("pretrain_loss.csv"), &s)
    }

    fn finetune(&self) -> Result<()> {
        let (enc, _) = self.encoder()?;
        let task = self.task()?;
        let model = finetune(&enc, &task, &self.finetune_cfg())?;
        self.save_model(&model, &task)?;
        let mut s = String::from("epoch,valid_score\n");
        for (i, sc) in model.history.iter().enumerate() {
            let _ = writeln!(s, "{i},{sc}");
        }
        let _ = writeln!(s, "# best_epoch = {}", model.best_epoch);
        write_text(self.path("history.csv"), &s)?;
        let level = enc.config().n_layers;
        let row = baseline_row(
            &self.cfg.experiment,
            &task.spec.name,
            level,
            baseline_scores(&model, &task)?,
            model.metric(),
        );
        emit_results_csv(self.path("results.csv"), &[row])
    }

    fn probe_dims(&self) -> Result<()> {
        let (model, task) = self.model()?;
        let prober = Prober::new(&model, &task)?;
        let sample = self.sample(prober.d_model(), self.cfg.subset_size)?;
        let report = truncate(
            sweep_sample(&prober, &sample, prober.final_level())?,
            self.cfg.report_top,
        );
        emit_results_csv(
            self.path("results.csv"),
            &report_rows(&self.cfg.experiment, &report),
        )
    }

    fn probe_effective(&self) -> Result<()> {
        let (model, task) = self.model()?;
        let prober = Prober::new(&model, &task)?;
        let sample = self.sample(prober.d_model(), 3)?;
        let triples = sweep_sample(&prober, &sample, prober.final_level())?;
        let eff = effective_dims(
            &prober,
            &triples,
            self.cfg.top_triples,
            self.cfg.effective_dims,
        )?;
        let pairs = pair_combinations(&prober, &eff.dims)?;

        let mut rows = report_rows(
            &self.sub("triples"),
            &triples.clone().truncated(self.cfg.top_triples),
        );
        for (rank, (_, loo)) in eff.triples.iter().enumerate() {
            for row in loo {
                rows.push(ResultRow {
                    experiment: self.sub("leave_one_out"),
                    task: triples.task.clone(),
                    layer: triples.layer,
                    subset: Some(row.pair.clone()),
                    rank: rank + 1,
                    valid: row.valid,
                    test: row.test,
                    metric: triples.metric,
                });
            }
        }
        rows.extend(report_rows(&self.sub("pairs"), &pairs));
        emit_results_csv(self.path("results.csv"), &rows)?;

        let mut s = String::from("dimension,max_valid_drop,selected\n");
        for (dim, drop) in &eff.drops {
            let _ = writeln!(s, "{dim},{drop:.4},{}", eff.dims.contains(dim));
        }
        write_text(self.path("effective_dims.csv"), &s)
    }

    fn probe_layers(&self) -> Result<()> {
        let (model, task) = self.model()?;
        let prober = Prober::new(&model, &task)?;
        let sample = self.sample(prober.d_model(), self.cfg.subset_size)?;
        let layers = layer_sweep(&prober, &sample.subsets, self.cfg.layer_top)?;
        let rows: Vec<ResultRow> = layers
            .iter()
            .flat_map(|l| report_rows(&self.cfg.experiment, &l.report))
            .collect();
        emit_results_csv(self.path("results.csv"), &rows)?;
        let mut s = String::from("level,label\n");
        for l in &layers {
            let _ = writeln!(s, "{},{}", l.level, l.label);
        }
        write_text(self.path("levels.csv"), &s)
    }

    fn probe_token(&self) -> Result<()> {
        let (enc, _) = self.encoder()?;
        let task = self.task()?;
        let mut rows = Vec::new();
        let mut positions = String::from("id,split,position\n");
        for pooling in [Pooling::Cls, Pooling::MaxPool] {
            let cfg = FineTuneConfig {
                pooling,
                ..self.finetune_cfg()
            };
            let model = finetune(&enc, &task, &cfg)?;
            let prober = Prober::new(&model, &task)?;
            let sample = self.sample(prober.d_model(), self.cfg.subset_size)?;
            let report = truncate(
                sweep_sample(&prober, &sample, prober.final_level())?,
                self.cfg.report_top,
            );
            rows.extend(report_rows(&self.sub(pooling.as_str()), &report));
            if pooling == Pooling::MaxPool {
                let trained = model.encoder()?;
                for &i in &task.test {
                    let ex = &task.examples[i];
                    let trace =
                        crate::encoder::forward(trained, &ex.tokens, &ex.segments, false, 0)?;
                    let _ = writeln!(
                        positions,
                        "{},{},{}",
                        ex.id,
                        Split::Test.as_str(),
                        maxpool_position(&trace)?
                    );
                }
            }
        }
        emit_results_csv(self.path("results.csv"), &rows)?;
        write_text(self.path("maxpool_positions.csv"), &positions)
    }

    fn cross(&self) -> Result<()> {
        let (enc, _) = self.encoder()?;
        let source = self.task()?;
        let target = generate_task(&self.cfg.target_spec())?;
        let (model, rep) = cross_finetune(&enc, &source, &target, &self.finetune_cfg())?;
        let level = enc.config().n_layers;
        let rows = [
            baseline_row(
                &self.sub("source"),
                &rep.source_task,
                level,
                rep.source,
                source.spec.metric,
            ),
            baseline_row(
                &self.sub("cross"),
                &rep.target_task,
                level,
                rep.cross,
                target.spec.metric,
            ),
            baseline_row(
                &self.sub("direct"),
                &rep.target_task,
                level,
                rep.direct,
                target.spec.metric,
            ),
        ];
        emit_results_csv(self.path("results.csv"), &rows)?;
        write_text(
            self.path("cross.cfg"),
            &format!("head_reset_seed = {}\n", rep.reset_seed),
        )?;
        self.save_model(&model, &target)
    }

    fn freeze(&self) -> Result<()> {
        let (enc, _) = self.encoder()?;
        let task = self.task()?;
        let rep = freeze_compare(&enc, &task, &self.finetune_cfg())?;
        let level = enc.config().n_layers;
        let metric = task.spec.metric;
        let rows = [
            baseline_row(
                &self.sub("unfrozen"),
                &task.spec.name,
                level,
                (rep.unfrozen.valid, rep.unfrozen.test),
                metric,
            ),
            baseline_row(
                &self.sub("frozen"),
                &task.spec.name,
                level,
                (rep.frozen.valid, rep.frozen.test),
                metric,
            ),
        ];
        emit_results_csv(self.path("results.csv"), &rows)?;
        let mut s = String::new();
        for (arm, m) in [
            ("unfrozen", &rep.unfrozen.model),
            ("frozen", &rep.frozen.model),
        ] {
            let c = &m.config;
            let _ = writeln!(
                s,
                "{arm}: freeze_encoder = {}, head_depth = {}, head_hidden = {}, head_nonlinearity = gelu, learning_rate = {}, seed = {}",
                c.freeze_encoder,
                c.head_depth,
                m.head.d_hidden(),
                c.learning_rate,
                c.seed
            );
        }
        write_text(self.path("arms.txt"), &s)
    }

    fn dropout_ablate(&self) -> Result<()> {
        let (enc, _) = self.encoder()?;
        let task = self.task()?;
        let sample = self.sample(enc.config().d_model, self.cfg.subset_size)?;
        let ab = dropout_ablation(
            &enc,
            &task,
            &self.finetune_cfg(),
            &sample.subsets,
            self.cfg.threshold,
        )?;
        let mut rows = Vec::new();
        let mut s = String::from("arm,dropout_rate,bin,count\n");
        for (label, arm) in [
            ("dropout", &ab.with_dropout),
            ("no_dropout", &ab.without_dropout),
        ] {
            rows.extend(report_rows(
                &self.sub(label),
                &truncate(arm.report.clone(), self.cfg.report_top),
            ));
            for (bin, count) in &arm.histogram.bins {
                let _ = writeln!(s, "{label},{},{bin},{count}", arm.dropout_rate);
            }
            let _ = writeln!(
                s,
                "{label},{},NaN,{}",
                arm.dropout_rate, arm.histogram.undefined
            );
        }
        emit_results_csv(self.path("results.csv"), &rows)?;
        write_text(self.path("histogram.csv"), &s)?;
        let mut summary = String::new();
        for (label, arm) in [
            ("dropout", &ab.with_dropout),
            ("no_dropout", &ab.without_dropout),
        ] {
            let _ = writeln!(
                summary,
                "{label}: subsets = {}, above {} = {}, best test = {}",
                arm.histogram.total(),
                arm.histogram.threshold,
                arm.histogram.above_threshold,
                arm.report.top().map_or(Score::UNDEFINED, |e| e.test)
            );
        }
        write_text(self.path("threshold.txt"), &summary)?;
        emit_histogram_svg(
            &[
                ab.with_dropout.histogram.clone(),
                ab.without_dropout.histogram.clone(),
            ],
            task.spec.metric,
            self.path("histogram.svg"),
        )
    }

    fn errors(&self) -> Result<()> {
        let (model, task) = self.model()?;
        let prober = Prober::new(&model, &task)?;
        let sample = self.sample(prober.d_model(), self.cfg.subset_size)?;
        let report = sweep_sample(&prober, &sample, prober.final_level())?.truncated(ERROR_SUBSETS);
        let top: Vec<_> = report.entries.iter().map(|e| e.subset.clone()).collect();
        let ids = consistent_error_set(&prober, &top)?;
        emit_results_csv(
            self.path("results.csv"),
            &report_rows(&self.cfg.experiment, &report),
        )?;
        let mut s = String::from("id\n");
        for id in ids {
            let _ = writeln!(s, "{id}");
        }
        write_text(self.path("errors.csv"), &s)
    }

    fn dump_export(&self) -> Result<()> {
        let enc = match &self.cfg.model {
            Some(_) => self.model()?.0.encoder()?.clone(),
            None => self.encoder()?.0,
        };
        let task = self.task()?;
        let table = FeatureTable::from_model(&enc, &task, None)?;
        write_container(self.path("activations.rpb"), &[encode_activations(&table)?])
    }

    fn dump_probe(&self) -> Result<()> {
        let path = self
            .cfg
            .dump
            .as_ref()
            .ok_or_else(|| Error::Config("dump-probe needs `dump = <path>`".into()))?;
        let sections = read_container(path)?;
        let table = decode_activations(single_section(&sections, SectionTag::Activations)?)?;
        let metric = self.cfg.metric.unwrap_or(match table.label_kind {
            LabelKind::Class => MetricKind::Accuracy,
            LabelKind::Scalar => MetricKind::Pearson,
        });
        let model = train_head_on_dump(&table, &self.finetune_cfg(), &self.cfg.task_name, metric)?;
        write_container(self.path("model.rpb"), &[encode_model(&model)?])?;
        let prober = Prober::from_table(&model, table)?;
        let sample = self.sample(prober.d_model(), self.cfg.subset_size)?;
        let report = truncate(
            sweep_sample(&prober, &sample, prober.final_level())?,
            self.cfg.report_top,
        );
        emit_results_csv(
            self.path("results.csv"),
            &report_rows(&self.cfg.experiment, &report),
        )
    }

    fn report(&self) -> Result<()> {
        let path = self
            .cfg
            .results
            .as_ref()
            .ok_or_else(|| Error::Config("report needs `results = <path>`".into()))?;
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let rows = parse_results_csv(&text)?;
        let mut groups: Vec<(GroupKey, Vec<&ResultRow>)> = Vec::new();
        for r in &rows {
            let key = (r.experiment.clone(), r.task.clone(), r.layer);
            match groups.iter_mut().find(|(k, _)| *k == key) {
                Some((_, v)) => v.push(r),
                None => groups.push((key, vec![r])),
            }
        }
        let mut s = String::from("| experiment | task | layer | rows | ALL valid | ALL test | best subset | best valid | best test |\n");
        s.push_str("|---|---|---|---|---|---|---|---|---|\n");
        for ((exp, task, layer), v) in &groups {
            let all = v.iter().find(|r| r.subset.is_none());
            let best = v
                .iter()
                .filter(|r| r.subset.is_some())
                .min_by_key(|r| r.rank);
            let cell = |s: Option<Score>| s.map_or_else(|| "-".to_string(), |s| s.to_string());
            let _ = writeln!(
                s,
                "| {exp} | {task} | {layer} | {} | {} | {} | {} | {} | {} |",
                v.len(),
                cell(all.map(|r| r.valid)),
                cell(all.map(|r| r.test)),
                best.and_then(|r| r.subset.as_ref())
                    .map_or_else(|| "-".to_string(), |s| s.to_string()),
                cell(best.map(|r| r.valid)),
                cell(best.map(|r| r.test)),
            );
        }
        write_text(self.path("report.md"), &s)
    }
}
