use crate::error::{Error, Result};

/// Padding token id.
pub const PAD: u32 = 0;
/// Classification token id, always at position 0.
pub const CLS: u32 = 1;
/// Segment separator id.
pub const SEP: u32 = 2;
/// Replacement id for masked-token pretraining.
pub const MASK: u32 = 3;
/// First id available to ordinary content tokens.
pub const FIRST_CONTENT: u32 = 4;

/// Weight init scale for the default width. It keeps the per-matrix gain
/// (std times the square root of the width) that a 0.02 std gives at width
/// 768; at width 32 a 0.02 std leaves attention output too small for plain
/// gradient descent to move.
pub const DEFAULT_INIT_STD: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub max_len: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub dropout_rate: f64,
    /// Standard deviation of the truncated-normal weight init.
    pub init_std: f64,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            vocab_size: 64,
            max_len: 24,
            d_model: 32,
            n_layers: 4,
            n_heads: 4,
            d_ff: 64,
            dropout_rate: 0.1,
            init_std: DEFAULT_INIT_STD,
            seed: 42,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_heads == 0 || self.d_model == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return fail(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.max_len < 3 {
            return fail(format!("max_len {} is below 3", self.max_len));
        }
        if self.vocab_size <= FIRST_CONTENT as usize {
            return fail(format!(
                "vocab_size {} leaves no content tokens after the {} reserved ids",
                self.vocab_size, FIRST_CONTENT
            ));
        }
        if self.n_layers == 0 || self.d_ff == 0 {
            return fail("n_layers and d_ff must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return fail(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return fail(format!("init_std {} must be positive", self.init_std));
        }
        Ok(())
    }

    pub fn head_width(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Number of levels in an activation trace: embeddings plus each layer.
    pub fn n_levels(&self) -> usize {
        self.n_layers + 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn head_width_and_divisibility() {
        let cfg = EncoderConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.head_width(), 8);
        let bad = EncoderConfig {
            d_model: 30,
            ..cfg.clone()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let short = EncoderConfig { max_len: 2, ..cfg };
        assert!(short.validate().is_err());
    }
}
