//! Post-LayerNorm encoder forward pass recorded on a [`Tape`].

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{CLS, PAD, SEP};
use super::weights::{EncoderWeights, LayerParam};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Tape, Var};

pub const LAYER_NORM_EPS: f64 = 1e-5;
/// Additive attention bias applied to padding keys.
pub const PAD_MASK_BIAS: f64 = -1e9;

/// Per-level token representations for one input. Level 0 is the embedding
/// output and level `i` the output of transformer layer `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationTrace {
    levels: Vec<Matrix>,
    attention_mask: Vec<bool>,
}

impl ActivationTrace {
    pub fn new(levels: Vec<Matrix>, attention_mask: Vec<bool>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::Data("trace with no levels".into()));
        }
        let rows = attention_mask.len();
        if levels.iter().any(|m| m.rows() != rows) {
            return Err(Error::Dimension(format!(
                "trace levels must all have {rows} rows"
            )));
        }
        Ok(Self {
            levels,
            attention_mask,
        })
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn levels(&self) -> &[Matrix] {
        &self.levels
    }

    pub fn level(&self, level: usize) -> Result<&Matrix> {
        self.levels.get(level).ok_or(Error::Index {
            index: level,
            limit: self.levels.len(),
        })
    }

    pub fn final_level(&self) -> &Matrix {
        self.levels.last().expect("non-empty trace")
    }

    /// `true` for real tokens, `false` for padding.
    pub fn attention_mask(&self) -> &[bool] {
        &self.attention_mask
    }

    pub fn seq_len(&self) -> usize {
        self.attention_mask.len()
    }
}

/// Builds `[CLS] content` with all-zero segment ids.
pub fn single_input(content: &[u32]) -> (Vec<u32>, Vec<u8>) {
    let mut tokens = Vec::with_capacity(content.len() + 1);
    tokens.push(CLS);
    tokens.extend_from_slice(content);
    let segments = vec![0; tokens.len()];
    (tokens, segments)
}

/// Builds `[CLS] a [SEP] b [SEP]`; segment 0 covers CLS, `a` and the first
/// separator.
pub fn pair_input(a: &[u32], b: &[u32]) -> (Vec<u32>, Vec<u8>) {
    let mut tokens = Vec::with_capacity(a.len() + b.len() + 3);
    tokens.push(CLS);
    tokens.extend_from_slice(a);
    tokens.push(SEP);
    let first = tokens.len();
    tokens.extend_from_slice(b);
    tokens.push(SEP);
    let mut segments = vec![0; first];
    segments.resize(tokens.len(), 1);
    (tokens, segments)
}

/// Inverted dropout state for one recording.
pub(crate) struct Dropout {
    rate: f64,
    rng: ChaCha8Rng,
}

impl Dropout {
    pub(crate) fn new(rate: f64, seed: u64) -> Option<Self> {
        (rate > 0.0).then(|| Self {
            rate,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub(crate) fn apply(&mut self, tape: &mut Tape, x: Var) -> Result<Var> {
        let n = tape.value(x).len();
        let keep = 1.0 / (1.0 - self.rate);
        let mask = (0..n)
            .map(|_| {
                if self.rng.random::<f64>() < self.rate {
                    0.0
                } else {
                    keep
                }
            })
            .collect();
        tape.mul_const(x, mask)
    }
}

pub(crate) fn maybe_dropout(tape: &mut Tape, drop: &mut Option<Dropout>, x: Var) -> Result<Var> {
    match drop {
        Some(d) => d.apply(tape, x),
        None => Ok(x),
    }
}

/// Every encoder tensor recorded once on a tape.
pub(crate) struct EncoderVars {
    vars: Vec<Var>,
    n_layer_params: usize,
}

impl EncoderVars {
    pub(crate) fn record(tape: &mut Tape, weights: &EncoderWeights, trainable: bool) -> Self {
        let vars = weights
            .params()
            .iter()
            .map(|p| tape.param_or_const(p, trainable))
            .collect();
        Self {
            vars,
            n_layer_params: super::weights::LAYER_PARAM_NAMES.len(),
        }
    }

    fn layer(&self, layer: usize, which: LayerParam) -> Var {
        self.vars[3 + layer * self.n_layer_params + which as usize]
    }

    pub(crate) fn mlm_weight(&self) -> Var {
        self.vars[self.vars.len() - 2]
    }

    pub(crate) fn mlm_bias(&self) -> Var {
        self.vars[self.vars.len() - 1]
    }
}

pub(crate) fn validate_input(
    weights: &EncoderWeights,
    tokens: &[u32],
    segments: &[u8],
) -> Result<()> {
    let cfg = weights.config();
    if tokens.is_empty() {
        return Err(Error::Data("empty token sequence".into()));
    }
    if tokens.len() > cfg.max_len {
        return Err(Error::Truncation {
            len: tokens.len(),
            max_len: cfg.max_len,
        });
    }
    if segments.len() != tokens.len() {
        return Err(Error::Dimension(format!(
            "{} segment ids for {} tokens",
            segments.len(),
            tokens.len()
        )));
    }
    if let Some(&id) = tokens.iter().find(|&&t| t as usize >= cfg.vocab_size) {
        return Err(Error::Vocabulary {
            id,
            vocab_size: cfg.vocab_size,
        });
    }
    if tokens[0] != CLS {
        return Err(Error::Data(format!(
            "position 0 must hold the CLS id {CLS}, found {}",
            tokens[0]
        )));
    }
    if segments.iter().any(|&s| s > 1) {
        return Err(Error::Data("segment ids must be 0 or 1".into()));
    }
    Ok(())
}

/// Records the forward pass; returns one var per level.
pub(crate) fn encode(
    tape: &mut Tape,
    weights: &EncoderWeights,
    vars: &EncoderVars,
    tokens: &[u32],
    segments: &[u8],
    dropout: &mut Option<Dropout>,
) -> Result<Vec<Var>> {
    validate_input(weights, tokens, segments)?;
    let cfg = weights.config();
    let len = tokens.len();

    let tok_ids: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
    let pos_ids: Vec<usize> = (0..len).collect();
    let seg_ids: Vec<usize> = segments.iter().map(|&s| s as usize).collect();
    let tok = tape.gather_rows(vars.vars[0], &tok_ids)?;
    let pos = tape.gather_rows(vars.vars[1], &pos_ids)?;
    let seg = tape.gather_rows(vars.vars[2], &seg_ids)?;
    let emb = tape.add(tok, pos)?;
    let emb = tape.add(emb, seg)?;
    let mut x = maybe_dropout(tape, dropout, emb)?;

    let key_mask = if tokens.contains(&PAD) {
        let mut m = Matrix::zeros(len, len);
        for r in 0..len {
            for (c, &t) in tokens.iter().enumerate() {
                if t == PAD {
                    m.set(r, c, PAD_MASK_BIAS);
                }
            }
        }
        Some(m)
    } else {
        None
    };

    let mut levels = Vec::with_capacity(cfg.n_levels());
    levels.push(x);
    let width = cfg.head_width();
    let scale = 1.0 / (width as f64).sqrt();
    for l in 0..cfg.n_layers {
        let p = |w: LayerParam| vars.layer(l, w);
        let q = tape.matmul(x, p(LayerParam::Wq))?;
        let q = tape.add_row(q, p(LayerParam::Bq))?;
        let k = tape.matmul(x, p(LayerParam::Wk))?;
        let k = tape.add_row(k, p(LayerParam::Bk))?;
        let v = tape.matmul(x, p(LayerParam::Wv))?;
        let v = tape.add_row(v, p(LayerParam::Bv))?;

        let mut heads = Vec::with_capacity(cfg.n_heads);
        for h in 0..cfg.n_heads {
            let qh = tape.slice_cols(q, h * width, width)?;
            let kh = tape.slice_cols(k, h * width, width)?;
            let vh = tape.slice_cols(v, h * width, width)?;
            let scores = tape.matmul_t(qh, kh)?;
            let mut scores = tape.scale(scores, scale);
            if let Some(m) = &key_mask {
                scores = tape.add_const(scores, m)?;
            }
            let probs = tape.softmax_rows(scores);
            heads.push(tape.matmul(probs, vh)?);
        }
        let ctx = tape.concat_cols(&heads)?;
        let attn = tape.matmul(ctx, p(LayerParam::Wo))?;
        let attn = tape.add_row(attn, p(LayerParam::Bo))?;
        let attn = maybe_dropout(tape, dropout, attn)?;
        let res = tape.add(x, attn)?;
        let h1 = tape.layer_norm(
            res,
            p(LayerParam::Ln1Gain),
            p(LayerParam::Ln1Bias),
            LAYER_NORM_EPS,
        )?;

        let ff = tape.matmul(h1, p(LayerParam::Ff1W))?;
        let ff = tape.add_row(ff, p(LayerParam::Ff1B))?;
        let ff = tape.gelu(ff);
        let ff = tape.matmul(ff, p(LayerParam::Ff2W))?;
        let ff = tape.add_row(ff, p(LayerParam::Ff2B))?;
        let ff = maybe_dropout(tape, dropout, ff)?;
        let res = tape.add(h1, ff)?;
        x = tape.layer_norm(
            res,
            p(LayerParam::Ln2Gain),
            p(LayerParam::Ln2Bias),
            LAYER_NORM_EPS,
        )?;
        levels.push(x);
    }
    Ok(levels)
}

/// Records the encoder on `tape` and returns one var per level. Weights
/// enter as trainable leaves when `trainable` is set; `dropout` is an
/// optional (rate, seed) pair.
pub fn record_forward(
    tape: &mut Tape,
    weights: &EncoderWeights,
    tokens: &[u32],
    segments: &[u8],
    trainable: bool,
    dropout: Option<(f64, u64)>,
) -> Result<Vec<Var>> {
    let vars = EncoderVars::record(tape, weights, trainable);
    let mut dropout = dropout.and_then(|(rate, seed)| Dropout::new(rate, seed));
    encode(tape, weights, &vars, tokens, segments, &mut dropout)
}

/// Masked-token logits for the given rows of a final-level var.
pub fn record_mlm_logits(
    tape: &mut Tape,
    weights: &EncoderWeights,
    final_level: Var,
    positions: &[usize],
    trainable: bool,
) -> Result<Var> {
    let vars = EncoderVars::record(tape, weights, trainable);
    let rows = tape.gather_rows(final_level, positions)?;
    let logits = tape.matmul(rows, vars.mlm_weight())?;
    tape.add_row(logits, vars.mlm_bias())
}

/// Runs the encoder. With `train_mode` false the result depends only on
/// (weights, tokens, segments); with it true, dropout at
/// `config.dropout_rate` is drawn from `dropout_seed`.
pub fn forward(
    weights: &EncoderWeights,
    tokens: &[u32],
    segments: &[u8],
    train_mode: bool,
    dropout_seed: u64,
) -> Result<ActivationTrace> {
    let rate = if train_mode {
        weights.config().dropout_rate
    } else {
        0.0
    };
    let mut tape = Tape::new();
    let vars = EncoderVars::record(&mut tape, weights, false);
    let mut dropout = Dropout::new(rate, dropout_seed);
    let levels = encode(&mut tape, weights, &vars, tokens, segments, &mut dropout)?;
    let levels = levels.into_iter().map(|v| tape.value(v).clone()).collect();
    ActivationTrace::new(levels, tokens.iter().map(|&t| t != PAD).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;

    fn weights(dropout_rate: f64) -> EncoderWeights {
        EncoderWeights::init(&EncoderConfig {
            dropout_rate,
            ..EncoderConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn inference_is_deterministic() {
        let w = weights(0.1);
        let (t, s) = single_input(&[5, 9, 12, 40]);
        let a = forward(&w, &t, &s, false, 1).unwrap();
        let b = forward(&w, &t, &s, false, 99).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n_levels(), 5);
    }

    #[test]
    fn single_token_trace_shape() {
        let w = weights(0.1);
        let (t, s) = single_input(&[7]);
        let trace = forward(&w, &t, &s, false, 0).unwrap();
        assert!(trace.levels().iter().all(|m| m.shape() == (2, 32)));
    }

    #[test]
    fn zero_dropout_train_equals_inference() {
        let w = weights(0.0);
        let (t, s) = pair_input(&[5, 6], &[7, 8, 9]);
        assert_eq!(
            forward(&w, &t, &s, true, 3).unwrap(),
            forward(&w, &t, &s, false, 3).unwrap()
        );
    }

    #[test]
    fn dropout_changes_train_trace() {
        let w = weights(0.5);
        let (t, s) = single_input(&[5, 6, 7]);
        assert_ne!(
            forward(&w, &t, &s, true, 3).unwrap(),
            forward(&w, &t, &s, false, 3).unwrap()
        );
    }

    #[test]
    fn input_errors() {
        let w = weights(0.1);
        let (t, s) = single_input(&[70]);
        assert!(matches!(
            forward(&w, &t, &s, false, 0),
            Err(Error::Vocabulary { id: 70, .. })
        ));
        let (t, s) = single_input(&[5; 24]);
        assert!(matches!(
            forward(&w, &t, &s, false, 0),
            Err(Error::Truncation { len: 25, .. })
        ));
    }

    #[test]
    fn pair_input_layout() {
        let (t, s) = pair_input(&[10, 11], &[12]);
        assert_eq!(t, vec![CLS, 10, 11, SEP, 12, SEP]);
        assert_eq!(s, vec![0, 0, 0, 0, 1, 1]);
    }

    #[test]
    fn padding_leaves_cls_unchanged() {
        let w = weights(0.1);
        let (t, s) = single_input(&[5, 17, 30]);
        let base = forward(&w, &t, &s, false, 0).unwrap();
        let mut tp = t.clone();
        tp.extend([PAD; 6]);
        let sp = vec![0; tp.len()];
        let padded = forward(&w, &tp, &sp, false, 0).unwrap();
        for (a, b) in base.levels().iter().zip(padded.levels()) {
            for (x, y) in a.row(0).iter().zip(b.row(0)) {
                assert!((x - y).abs() <= 1e-9);
            }
        }
    }
}
