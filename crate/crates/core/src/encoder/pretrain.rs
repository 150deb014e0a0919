//! Masked-token pretraining on a synthetic corpus.

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::MASK;
use super::forward::{encode, single_input, Dropout, EncoderVars};
use super::weights::EncoderWeights;
use crate::error::{Error, Result};
use crate::numerics::{sgd_step, Tape, CLIP_NORM};

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainOptions {
    pub steps: usize,
    pub batch_size: usize,
    pub mask_fraction: f64,
    pub lr: f64,
    pub seed: u64,
}

impl Default for PretrainOptions {
    fn default() -> Self {
        Self {
            steps: 2_000,
            batch_size: 8,
            mask_fraction: 0.15,
            lr: 0.3,
            seed: 42,
        }
    }
}

/// Trains `weights` in place to recover masked content tokens. Each corpus
/// entry is a content sequence; CLS is prepended here. Returns the loss of
/// every step.
pub fn pretrain_mlm(
    weights: &mut EncoderWeights,
    corpus: &[Vec<u32>],
    opts: &PretrainOptions,
) -> Result<Vec<f64>> {
    if corpus.is_empty() || corpus.iter().all(Vec::is_empty) {
        return Err(Error::Data("pretraining corpus is empty".into()));
    }
    if !(opts.mask_fraction > 0.0 && opts.mask_fraction < 1.0) {
        return Err(Error::Config(format!(
            "mask_fraction {} outside (0, 1)",
            opts.mask_fraction
        )));
    }
    if opts.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let usable: Vec<&Vec<u32>> = corpus.iter().filter(|s| !s.is_empty()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let rate = weights.config().dropout_rate;
    let mut history = Vec::with_capacity(opts.steps);

    for step in 0..opts.steps {
        let mut tape = Tape::new();
        let vars = EncoderVars::record(&mut tape, weights, true);
        let mut rows = Vec::new();
        let mut targets = Vec::new();
        for _ in 0..opts.batch_size {
            let content = usable[rng.random_range(0..usable.len())];
            let (mut tokens, segments) = single_input(content);
            let n = content.len();
            let n_mask = ((opts.mask_fraction * n as f64).round() as usize).clamp(1, n);
            let mut picked: Vec<usize> = sample(&mut rng, n, n_mask)
                .into_iter()
                .map(|i| i + 1)
                .collect();
            picked.sort_unstable();
            for &p in &picked {
                targets.push(tokens[p] as usize);
                tokens[p] = MASK;
            }
            let mut dropout = Dropout::new(rate, rng.random());
            let levels = encode(&mut tape, weights, &vars, &tokens, &segments, &mut dropout)?;
            let last = *levels.last().expect("at least one level");
            rows.push(tape.gather_rows(last, &picked)?);
        }
        let hidden = tape.concat_rows(&rows)?;
        let logits = tape.matmul(hidden, vars.mlm_weight())?;
        let logits = tape.add_row(logits, vars.mlm_bias())?;
        let loss = tape.cross_entropy(logits, &targets)?;
        let value = tape.value(loss).get(0, 0);
        if !value.is_finite() {
            return Err(Error::Training {
                epoch: step,
                detail: "non-finite masked-token loss".into(),
            });
        }
        let grads = tape.backward(loss)?;
        sgd_step(&mut [weights.params_mut()], &grads, opts.lr, CLIP_NORM)?;
        history.push(value);
    }
    Ok(history)
}
