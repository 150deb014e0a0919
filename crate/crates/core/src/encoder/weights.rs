use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::EncoderConfig;
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Parameter};

/// Init scale for newly added head layers.
pub const INIT_STD: f64 = 0.02;

/// Parameters per transformer layer, in storage order.
pub const LAYER_PARAM_NAMES: [&str; 16] = [
    "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo", "ln1.gain", "ln1.bias", "ff1.w", "ff1.b",
    "ff2.w", "ff2.b", "ln2.gain", "ln2.bias",
];

const EMBED_PARAMS: usize = 3;

/// Index of one parameter within a layer block.
#[derive(Clone, Copy, Debug)]
pub enum LayerParam {
    Wq = 0,
    Bq,
    Wk,
    Bk,
    Wv,
    Bv,
    Wo,
    Bo,
    Ln1Gain,
    Ln1Bias,
    Ff1W,
    Ff1B,
    Ff2W,
    Ff2B,
    Ln2Gain,
    Ln2Bias,
}

/// All trainable tensors of the encoder, in a fixed order:
/// token, position and segment embeddings, sixteen tensors per layer, then
/// the masked-token output projection and bias.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderWeights {
    config: EncoderConfig,
    params: Vec<Parameter>,
}

/// Draws from N(0, std²) truncated to two standard deviations.
pub fn truncated_normal(rng: &mut impl Rng, std: f64) -> f64 {
    let normal = Normal::new(0.0, std).expect("positive std");
    loop {
        let v: f64 = normal.sample(rng);
        if v.abs() <= 2.0 * std {
            return v;
        }
    }
}

pub(crate) fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize, std: f64) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| truncated_normal(rng, std))
        .collect();
    Matrix::from_vec(rows, cols, data).expect("finite draws")
}

fn is_bias(name: &str) -> bool {
    let last = name.rsplit('.').next().unwrap_or(name);
    matches!(last, "b" | "bias" | "bq" | "bk" | "bv" | "bo")
}

/// Expected (name, rows, cols) for every parameter under `config`.
pub fn parameter_layout(config: &EncoderConfig) -> Vec<(String, usize, usize)> {
    let d = config.d_model;
    let mut out = vec![
        ("emb.token".to_string(), config.vocab_size, d),
        ("emb.position".to_string(), config.max_len, d),
        ("emb.segment".to_string(), 2, d),
    ];
    for layer in 0..config.n_layers {
        for name in LAYER_PARAM_NAMES {
            let (r, c) = match name {
                "wq" | "wk" | "wv" | "wo" => (d, d),
                "ff1.w" => (d, config.d_ff),
                "ff1.b" => (1, config.d_ff),
                "ff2.w" => (config.d_ff, d),
                _ => (1, d),
            };
            out.push((format!("enc.layer{layer}.{name}"), r, c));
        }
    }
    out.push(("mlm.w".to_string(), d, config.vocab_size));
    out.push(("mlm.b".to_string(), 1, config.vocab_size));
    out
}

impl EncoderWeights {
    /// Truncated-normal(0, `config.init_std`) weights, zero biases, unit
    /// LayerNorm gains, all drawn from `config.seed`.
    pub fn init(config: &EncoderConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = parameter_layout(config)
            .into_iter()
            .map(|(name, r, c)| {
                let value = if name.ends_with(".gain") {
                    Matrix::filled(r, c, 1.0)
                } else if is_bias(&name) {
                    Matrix::zeros(r, c)
                } else {
                    random_matrix(&mut rng, r, c, config.init_std)
                };
                Parameter::new(name, value)
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            params,
        })
    }

    /// Rebuilds weights from stored parameters, checking names and shapes.
    pub fn from_parts(config: EncoderConfig, params: Vec<Parameter>) -> Result<Self> {
        config.validate()?;
        let layout = parameter_layout(&config);
        if layout.len() != params.len() {
            return Err(Error::Format(format!(
                "expected {} encoder tensors, found {}",
                layout.len(),
                params.len()
            )));
        }
        for ((name, r, c), p) in layout.iter().zip(&params) {
            if &p.name != name || p.value.shape() != (*r, *c) {
                return Err(Error::Format(format!(
                    "tensor {} ({}x{}) does not match expected {} ({}x{})",
                    p.name,
                    p.value.rows(),
                    p.value.cols(),
                    name,
                    r,
                    c
                )));
            }
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn token_embedding(&self) -> &Parameter {
        &self.params[0]
    }

    pub fn position_embedding(&self) -> &Parameter {
        &self.params[1]
    }

    pub fn segment_embedding(&self) -> &Parameter {
        &self.params[2]
    }

    pub fn layer(&self, layer: usize, which: LayerParam) -> &Parameter {
        &self.params[EMBED_PARAMS + layer * LAYER_PARAM_NAMES.len() + which as usize]
    }

    pub fn mlm_weight(&self) -> &Parameter {
        &self.params[self.params.len() - 2]
    }

    pub fn mlm_bias(&self) -> &Parameter {
        &self.params[self.params.len() - 1]
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(Parameter::numel).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_and_shaped() {
        let cfg = EncoderConfig::default();
        let a = EncoderWeights::init(&cfg).unwrap();
        let b = EncoderWeights::init(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.params().len(), 3 + 16 * 4 + 2);
        assert_eq!(a.layer(2, LayerParam::Ff1W).value.shape(), (32, 64));
        assert_eq!(a.layer(3, LayerParam::Ln2Gain).value.as_slice(), &[1.0; 32]);
        assert!(a
            .layer(0, LayerParam::Bq)
            .value
            .as_slice()
            .iter()
            .all(|&v| v == 0.0));
        assert!(a.mlm_bias().value.as_slice().iter().all(|&v| v == 0.0));
        let w = a.layer(1, LayerParam::Wk).value.as_slice();
        assert!(w.iter().all(|v| v.abs() <= 2.0 * cfg.init_std));
        assert!(w.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn different_seed_differs() {
        let a = EncoderWeights::init(&EncoderConfig::default()).unwrap();
        let b = EncoderWeights::init(&EncoderConfig {
            seed: 7,
            ..EncoderConfig::default()
        })
        .unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = EncoderConfig {
            d_model: 30,
            ..EncoderConfig::default()
        };
        assert!(matches!(EncoderWeights::init(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn from_parts_checks_shapes() {
        let cfg = EncoderConfig::default();
        let w = EncoderWeights::init(&cfg).unwrap();
        let mut params = w.params().to_vec();
        assert!(EncoderWeights::from_parts(cfg.clone(), params.clone()).is_ok());
        params[4].value = Matrix::zeros(1, 1);
        assert!(matches!(
            EncoderWeights::from_parts(cfg, params),
            Err(Error::Format(_))
        ));
    }
}
