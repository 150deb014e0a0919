//! Payload encodings for the four section kinds.

use std::str::FromStr;

use super::bytes::{ByteReader, ByteWriter};
use super::container::{Section, SectionTag};
use crate::encoder::{EncoderConfig, EncoderWeights};
use crate::error::{Error, Result};
use crate::finetune::{FineTuneConfig, FineTunedModel, Head, Pooling, TaskInfo};
use crate::numerics::{Matrix, Parameter};
use crate::probe::{FeatureRow, FeatureTable, LabelKind};
use crate::tasks::{Example, Label, Score, Split, TaskDataset, TaskKind, TaskSpec};

/// Size of the fixed activation-dump header.
pub const ACTV_HEADER_BYTES: usize = 20;

/// Exact payload size of an activation dump.
pub fn actv_payload_len(n_examples: usize, n_levels: usize, d_model: usize) -> usize {
    ACTV_HEADER_BYTES + n_examples * (4 + 4 + 4 + (n_levels * d_model + d_model) * 4)
}

fn parse_field<T: FromStr>(r: &ByteReader<'_>, s: &str, what: &str) -> Result<T> {
    s.parse()
        .map_err(|_| r.corrupt(format!("invalid {what} {s:?}")))
}

fn flag(r: &ByteReader<'_>, v: u8) -> Result<bool> {
    match v {
        0 => Ok(false),
        1 => Ok(true),
        other => Err(r.corrupt(format!("flag byte {other} is not 0 or 1"))),
    }
}

fn put_params(w: &mut ByteWriter, params: &[Parameter]) -> Result<()> {
    w.usize32(params.len())?;
    for p in params {
        w.str(&p.name)?;
        w.usize32(p.value.rows())?;
        w.usize32(p.value.cols())?;
        for &v in p.value.as_slice() {
            w.f64(v);
        }
    }
    Ok(())
}

fn get_params(r: &mut ByteReader<'_>) -> Result<Vec<Parameter>> {
    let n = r.usize32()?;
    let mut out = Vec::with_capacity(n.min(1024));
    for _ in 0..n {
        let name = r.str()?;
        let rows = r.usize32()?;
        let cols = r.usize32()?;
        let len = rows
            .checked_mul(cols)
            .ok_or_else(|| r.corrupt("tensor size overflows"))?;
        let raw = r.take(
            len.checked_mul(8)
                .ok_or_else(|| r.corrupt("tensor size overflows"))?,
        )?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let value = Matrix::from_vec(rows, cols, data).map_err(|e| r.corrupt(e.to_string()))?;
        out.push(Parameter::new(name, value));
    }
    Ok(out)
}

fn put_encoder_config(w: &mut ByteWriter, c: &EncoderConfig) -> Result<()> {
    for v in [
        c.vocab_size,
        c.max_len,
        c.d_model,
        c.n_layers,
        c.n_heads,
        c.d_ff,
    ] {
        w.usize32(v)?;
    }
    w.f64(c.dropout_rate);
    w.f64(c.init_std);
    w.u64(c.seed);
    Ok(())
}

fn get_encoder_config(r: &mut ByteReader<'_>) -> Result<EncoderConfig> {
    Ok(EncoderConfig {
        vocab_size: r.usize32()?,
        max_len: r.usize32()?,
        d_model: r.usize32()?,
        n_layers: r.usize32()?,
        n_heads: r.usize32()?,
        d_ff: r.usize32()?,
        dropout_rate: r.f64()?,
        init_std: r.f64()?,
        seed: r.u64()?,
    })
}

/// Config followed by every tensor in layout order, values as f64.
pub fn encode_weights(weights: &EncoderWeights) -> Result<Section> {
    let mut w = ByteWriter::new();
    put_encoder_config(&mut w, weights.config())?;
    put_params(&mut w, weights.params())?;
    Ok(Section::new(SectionTag::Weights, w.into_bytes()))
}

pub fn decode_weights(section: &Section) -> Result<EncoderWeights> {
    expect_tag(section, SectionTag::Weights)?;
    let mut r = ByteReader::new("WGTS", &section.payload);
    let weights = get_weights(&mut r)?;
    r.finish()?;
    Ok(weights)
}

fn get_weights(r: &mut ByteReader<'_>) -> Result<EncoderWeights> {
    let config = get_encoder_config(r)?;
    let params = get_params(r)?;
    EncoderWeights::from_parts(config, params)
}

fn expect_tag(section: &Section, tag: SectionTag) -> Result<()> {
    if section.tag != tag {
        return Err(Error::Format(format!(
            "expected a {tag} section, found {}",
            section.tag
        )));
    }
    Ok(())
}

fn put_label(w: &mut ByteWriter, label: Label) {
    match label {
        Label::Class(c) => {
            w.u8(0);
            w.u32(c);
        }
        Label::Scalar(v) => {
            w.u8(1);
            w.f64(v);
        }
    }
}

fn get_label(r: &mut ByteReader<'_>) -> Result<Label> {
    match r.u8()? {
        0 => Ok(Label::Class(r.u32()?)),
        1 => Ok(Label::Scalar(r.f64()?)),
        other => Err(r.corrupt(format!("label kind {other}"))),
    }
}

fn put_spec(w: &mut ByteWriter, s: &TaskSpec) -> Result<()> {
    w.str(&s.name)?;
    w.str(&s.rule.to_string())?;
    w.str(s.metric.as_str())?;
    w.f64(s.noise_rate);
    w.usize32(s.n_examples)?;
    w.u64(s.seed);
    w.usize32(s.vocab_size)?;
    w.usize32(s.content_len.0)?;
    w.usize32(s.content_len.1)?;
    Ok(())
}

fn get_spec(r: &mut ByteReader<'_>) -> Result<TaskSpec> {
    let name = r.str()?;
    let rule = r.str()?;
    let metric = r.str()?;
    Ok(TaskSpec {
        name,
        rule: parse_field(r, &rule, "rule")?,
        metric: parse_field(r, &metric, "metric")?,
        noise_rate: r.f64()?,
        n_examples: r.usize32()?,
        seed: r.u64()?,
        vocab_size: r.usize32()?,
        content_len: (r.usize32()?, r.usize32()?),
    })
}

fn put_indices(w: &mut ByteWriter, idx: &[usize]) -> Result<()> {
    w.usize32(idx.len())?;
    for &i in idx {
        w.usize32(i)?;
    }
    Ok(())
}

fn get_indices(r: &mut ByteReader<'_>, n: usize) -> Result<Vec<usize>> {
    let len = r.usize32()?;
    let out = (0..len).map(|_| r.usize32()).collect::<Result<Vec<_>>>()?;
    if out.iter().any(|&i| i >= n) || out.windows(2).any(|w| w[0] >= w[1]) {
        return Err(r.corrupt("split indices are not sorted example positions"));
    }
    Ok(out)
}

/// Task spec, every example, and the three split index lists.
pub fn encode_task(task: &TaskDataset) -> Result<Section> {
    let mut w = ByteWriter::new();
    put_spec(&mut w, &task.spec)?;
    w.usize32(task.examples.len())?;
    for ex in &task.examples {
        w.u32(ex.id);
        put_label(&mut w, ex.label);
        w.usize32(ex.tokens.len())?;
        for &t in &ex.tokens {
            w.u32(t);
        }
        for &s in &ex.segments {
            w.u8(s);
        }
    }
    for split in [Split::Train, Split::Valid, Split::Test] {
        put_indices(&mut w, task.split(split))?;
    }
    Ok(Section::new(SectionTag::Task, w.into_bytes()))
}

pub fn decode_task(section: &Section) -> Result<TaskDataset> {
    expect_tag(section, SectionTag::Task)?;
    let mut r = ByteReader::new("TASK", &section.payload);
    let spec = get_spec(&mut r)?;
    let n = r.usize32()?;
    let mut examples = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        let id = r.u32()?;
        let label = get_label(&mut r)?;
        let len = r.usize32()?;
        let tokens = (0..len).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let segments = r.take(len)?.to_vec();
        examples.push(Example {
            id,
            tokens,
            segments,
            label,
        });
    }
    let train = get_indices(&mut r, n)?;
    let valid = get_indices(&mut r, n)?;
    let test = get_indices(&mut r, n)?;
    r.finish()?;
    Ok(TaskDataset {
        spec,
        examples,
        train,
        valid,
        test,
    })
}

fn put_score(w: &mut ByteWriter, s: Score) {
    w.f64(s.value().unwrap_or(f64::NAN));
}

fn get_score(r: &mut ByteReader<'_>) -> Result<Score> {
    Ok(Score::new(r.f64()?))
}

/// Task description, training config and history, head, and (unless the
/// model was trained on a dump) the fine-tuned encoder.
pub fn encode_model(model: &FineTunedModel) -> Result<Section> {
    let mut w = ByteWriter::new();
    w.str(&model.task.name)?;
    w.str(model.task.kind.as_str())?;
    w.usize32(model.task.n_classes)?;
    w.str(model.task.metric.as_str())?;
    let c = &model.config;
    w.f64(c.learning_rate);
    w.usize32(c.batch_size)?;
    w.usize32(c.max_epochs)?;
    w.f64(c.dropout_rate);
    w.u64(c.seed);
    w.str(c.pooling.as_str())?;
    w.u8(c.freeze_encoder as u8);
    w.usize32(c.head_depth)?;
    w.str(model.pooling.as_str())?;
    w.u64(model.head_seed);
    w.usize32(model.history.len())?;
    for &s in &model.history {
        put_score(&mut w, s);
    }
    w.usize32(model.best_epoch)?;
    w.usize32(model.head.depth())?;
    w.usize32(model.head.n_out())?;
    put_params(&mut w, model.head.params())?;
    match &model.encoder {
        None => w.u8(0),
        Some(enc) => {
            w.u8(1);
            w.bytes(&encode_weights(enc)?.payload);
        }
    }
    Ok(Section::new(SectionTag::Model, w.into_bytes()))
}

pub fn decode_model(section: &Section) -> Result<FineTunedModel> {
    expect_tag(section, SectionTag::Model)?;
    let mut r = ByteReader::new("FTMD", &section.payload);
    let name = r.str()?;
    let kind = r.str()?;
    let kind: TaskKind = parse_field(&r, &kind, "task kind")?;
    let n_classes = r.usize32()?;
    let metric = r.str()?;
    let metric = parse_field(&r, &metric, "metric")?;
    let task = TaskInfo {
        name,
        kind,
        n_classes,
        metric,
    };
    let learning_rate = r.f64()?;
    let batch_size = r.usize32()?;
    let max_epochs = r.usize32()?;
    let dropout_rate = r.f64()?;
    let seed = r.u64()?;
    let pooling = r.str()?;
    let pooling: Pooling = parse_field(&r, &pooling, "pooling")?;
    let freeze = r.u8()?;
    let config = FineTuneConfig {
        learning_rate,
        batch_size,
        max_epochs,
        dropout_rate,
        seed,
        pooling,
        freeze_encoder: flag(&r, freeze)?,
        head_depth: r.usize32()?,
    };
    let model_pooling = r.str()?;
    let model_pooling = parse_field(&r, &model_pooling, "pooling")?;
    let head_seed = r.u64()?;
    let n_hist = r.usize32()?;
    let history = (0..n_hist)
        .map(|_| get_score(&mut r))
        .collect::<Result<Vec<_>>>()?;
    let best_epoch = r.usize32()?;
    let depth = r.usize32()?;
    let n_out = r.usize32()?;
    let head = Head::from_parts(depth, n_out, get_params(&mut r)?)?;
    let has_encoder = r.u8()?;
    let encoder = if flag(&r, has_encoder)? {
        let raw = r.bytes()?;
        let mut inner = ByteReader::new("FTMD", raw);
        let weights = get_weights(&mut inner)?;
        inner.finish()?;
        Some(weights)
    } else {
        None
    };
    r.finish()?;
    Ok(FineTunedModel {
        encoder,
        head,
        task,
        pooling: model_pooling,
        config,
        head_seed,
        history,
        best_epoch,
    })
}

/// Fixed-layout activation dump: a 20-byte header, then per example its
/// id, label, split byte, three zero bytes, the CLS vector of every level
/// and the final-level MaxPooling vector, all as 32-bit floats.
pub fn encode_activations(table: &FeatureTable) -> Result<Section> {
    table.validate()?;
    let mut w = ByteWriter::new();
    w.usize32(table.rows.len())?;
    w.usize32(table.n_levels)?;
    w.usize32(table.d_model)?;
    w.u8(match table.label_kind {
        LabelKind::Class => 0,
        LabelKind::Scalar => 1,
    });
    w.u8(table.split_coded as u8);
    w.u16(0);
    w.u32(table.n_classes);
    for row in &table.rows {
        w.u32(row.id);
        match row.label {
            Label::Class(c) => w.u32(c),
            Label::Scalar(v) => w.f32(v as f32),
        }
        w.u8(if table.split_coded {
            row.split.code()
        } else {
            0
        });
        w.u8(0);
        w.u16(0);
        for level in &row.levels {
            for &v in level {
                w.f32(v);
            }
        }
        for &v in &row.maxpool {
            w.f32(v);
        }
    }
    Ok(Section::new(SectionTag::Activations, w.into_bytes()))
}

pub fn decode_activations(section: &Section) -> Result<FeatureTable> {
    expect_tag(section, SectionTag::Activations)?;
    let mut r = ByteReader::new("ACTV", &section.payload);
    let n = r.usize32()?;
    let n_levels = r.usize32()?;
    let d_model = r.usize32()?;
    let label_kind = match r.u8()? {
        0 => LabelKind::Class,
        1 => LabelKind::Scalar,
        other => {
            return Err(Error::Format(format!(
                "activation label kind {other} is not 0 or 1"
            )))
        }
    };
    let split_coded = r.u8()?;
    let split_coded = flag(&r, split_coded)?;
    if r.u16()? != 0 {
        return Err(r.corrupt("reserved header field is not zero"));
    }
    let n_classes = r.u32()?;
    let expected = n
        .checked_mul(
            n_levels
                .saturating_mul(d_model)
                .saturating_add(d_model)
                .saturating_mul(4)
                .saturating_add(12),
        )
        .and_then(|b| b.checked_add(ACTV_HEADER_BYTES));
    if expected != Some(section.payload.len()) {
        return Err(r.corrupt(format!(
            "{} examples of {n_levels} levels at width {d_model} do not fill {} bytes",
            n,
            section.payload.len()
        )));
    }
    let floats = |r: &mut ByteReader<'_>, k: usize| -> Result<Vec<f32>> {
        Ok(r.take(k * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    };
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        let id = r.u32()?;
        let label = match label_kind {
            LabelKind::Class => Label::Class(r.u32()?),
            LabelKind::Scalar => Label::Scalar(r.f32()? as f64),
        };
        let code = r.u8()?;
        let split = if split_coded {
            Split::from_code(code).map_err(|_| r.corrupt(format!("split code {code}")))?
        } else if code == 0 {
            Split::Train
        } else {
            return Err(r.corrupt("split byte set in a dump without split assignment"));
        };
        if r.take(3)? != [0, 0, 0] {
            return Err(r.corrupt("padding bytes are not zero"));
        }
        let levels = (0..n_levels)
            .map(|_| floats(&mut r, d_model))
            .collect::<Result<Vec<_>>>()?;
        let maxpool = floats(&mut r, d_model)?;
        rows.push(FeatureRow {
            id,
            label,
            split,
            levels,
            maxpool,
        });
    }
    r.finish()?;
    let table = FeatureTable {
        n_levels,
        d_model,
        label_kind,
        n_classes,
        split_coded,
        rows,
    };
    table.validate()?;
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn activation_size_arithmetic() {
        assert_eq!(
            actv_payload_len(100, 5, 32),
            100 * (4 + 4 + 4 + (5 * 32 + 32) * 4) + 20
        );
    }

    #[test]
    fn weights_round_trip() {
        let cfg = EncoderConfig {
            d_model: 8,
            n_heads: 2,
            d_ff: 8,
            n_layers: 1,
            ..EncoderConfig::default()
        };
        let w = EncoderWeights::init(&cfg).unwrap();
        let s = encode_weights(&w).unwrap();
        assert_eq!(decode_weights(&s).unwrap(), w);
    }

    #[test]
    fn truncated_payload_is_corruption() {
        let cfg = EncoderConfig {
            d_model: 8,
            n_heads: 2,
            d_ff: 8,
            n_layers: 1,
            ..EncoderConfig::default()
        };
        let mut s = encode_weights(&EncoderWeights::init(&cfg).unwrap()).unwrap();
        s.payload.truncate(s.payload.len() - 1);
        assert!(matches!(decode_weights(&s), Err(Error::Corruption { .. })));
    }
}
