use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::encoder::{random_matrix, INIT_STD};
use crate::error::{Error, Result};
use crate::numerics::{gelu_scalar, Matrix, Parameter, Tape, Var};

/// Fully connected classifier or regressor on top of a pooled vector.
///
/// Depth 1 is a single affine map `d_model -> n_out`. Depth 2 adds a hidden
/// stage of width `d_hidden` followed by GELU.
#[derive(Clone, Debug, PartialEq)]
pub struct Head {
    depth: usize,
    d_model: usize,
    d_hidden: usize,
    n_out: usize,
    params: Vec<Parameter>,
}

pub fn init_head(d_model: usize, n_out: usize, head_depth: usize, seed: u64) -> Result<Head> {
    if d_model == 0 || n_out == 0 {
        return Err(Error::Config("head dimensions must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d_hidden = d_model;
    let params = match head_depth {
        1 => vec![
            Parameter::new("head.w1", random_matrix(&mut rng, d_model, n_out, INIT_STD)),
            Parameter::new("head.b1", Matrix::zeros(1, n_out)),
        ],
        2 => vec![
            Parameter::new(
                "head.w1",
                random_matrix(&mut rng, d_model, d_hidden, INIT_STD),
            ),
            Parameter::new("head.b1", Matrix::zeros(1, d_hidden)),
            Parameter::new(
                "head.w2",
                random_matrix(&mut rng, d_hidden, n_out, INIT_STD),
            ),
            Parameter::new("head.b2", Matrix::zeros(1, n_out)),
        ],
        other => return Err(Error::Config(format!("head depth {other} is not 1 or 2"))),
    };
    Ok(Head {
        depth: head_depth,
        d_model,
        d_hidden: if head_depth == 2 { d_hidden } else { 0 },
        n_out,
        params,
    })
}

impl Head {
    pub fn from_parts(depth: usize, n_out: usize, params: Vec<Parameter>) -> Result<Self> {
        let shape_err = || Error::Format("head tensors do not form a valid head".into());
        let expected = if depth == 1 {
            2
        } else if depth == 2 {
            4
        } else {
            0
        };
        if params.len() != expected {
            return Err(shape_err());
        }
        let d_model = params[0].value.rows();
        let d_hidden = if depth == 2 {
            params[0].value.cols()
        } else {
            0
        };
        let shapes: Vec<(usize, usize)> = if depth == 1 {
            vec![(d_model, n_out), (1, n_out)]
        } else {
            vec![
                (d_model, d_hidden),
                (1, d_hidden),
                (d_hidden, n_out),
                (1, n_out),
            ]
        };
        if params
            .iter()
            .zip(&shapes)
            .any(|(p, s)| p.value.shape() != *s)
        {
            return Err(shape_err());
        }
        Ok(Self {
            depth,
            d_model,
            d_hidden,
            n_out,
            params,
        })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn d_model(&self) -> usize {
        self.d_model
    }

    pub fn d_hidden(&self) -> usize {
        self.d_hidden
    }

    pub fn n_out(&self) -> usize {
        self.n_out
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(Parameter::numel).sum()
    }

    /// Records the head on `tape` for a batch of pooled rows.
    pub fn record(&self, tape: &mut Tape, input: Var) -> Result<Var> {
        let w1 = tape.param(&self.params[0]);
        let b1 = tape.param(&self.params[1]);
        let z = tape.matmul(input, w1)?;
        let z = tape.add_row(z, b1)?;
        if self.depth == 1 {
            return Ok(z);
        }
        let h = tape.gelu(z);
        let w2 = tape.param(&self.params[2]);
        let b2 = tape.param(&self.params[3]);
        let z = tape.matmul(h, w2)?;
        tape.add_row(z, b2)
    }

    /// Output for one vector using only the coordinates listed in `active`
    /// (all others treated as zero).
    pub fn forward_sparse(&self, x: &[f64], active: impl IntoIterator<Item = usize>) -> Vec<f64> {
        let first = affine_sparse(&self.params[0].value, &self.params[1].value, x, active);
        if self.depth == 1 {
            return first;
        }
        let hidden: Vec<f64> = first.into_iter().map(gelu_scalar).collect();
        affine_sparse(
            &self.params[2].value,
            &self.params[3].value,
            &hidden,
            0..hidden.len(),
        )
    }

    /// Output for one vector using every coordinate.
    pub fn forward_vec(&self, x: &[f64]) -> Vec<f64> {
        self.forward_sparse(x, 0..x.len())
    }

    /// Copy of the head whose first-stage input weights are zero for every
    /// dimension outside `keep`.
    pub fn with_input_columns_zeroed(&self, keep: &[usize]) -> Head {
        let mut out = self.clone();
        let w = &mut out.params[0].value;
        for r in 0..w.rows() {
            if keep.binary_search(&r).is_err() {
                w.row_mut(r).fill(0.0);
            }
        }
        out
    }
}

/// `b + sum_i x_i W[i]` over `active`, skipping exact zeros in `x`, with the
/// bias added last.
fn affine_sparse(
    w: &Matrix,
    b: &Matrix,
    x: &[f64],
    active: impl IntoIterator<Item = usize>,
) -> Vec<f64> {
    let mut acc = vec![0.0; w.cols()];
    for i in active {
        let xi = x[i];
        if xi == 0.0 {
            continue;
        }
        for (a, wv) in acc.iter_mut().zip(w.row(i)) {
            *a += xi * wv;
        }
    }
    for (a, bv) in acc.iter_mut().zip(b.as_slice()) {
        *a += bv;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_seeded() {
        assert_eq!(
            init_head(32, 2, 1, 7).unwrap(),
            init_head(32, 2, 1, 7).unwrap()
        );
        assert_ne!(
            init_head(32, 2, 1, 7).unwrap(),
            init_head(32, 2, 1, 8).unwrap()
        );
    }

    #[test]
    fn parameter_counts() {
        assert_eq!(init_head(32, 2, 1, 0).unwrap().num_scalars(), 32 * 2 + 2);
        let d = 32;
        assert_eq!(
            init_head(d, 3, 2, 0).unwrap().num_scalars(),
            d * d + d + d * 3 + 3
        );
        assert!(init_head(32, 2, 3, 0).is_err());
    }

    #[test]
    fn tape_and_vector_paths_agree() {
        let head = init_head(6, 3, 2, 1).unwrap();
        let x = [0.3, -1.2, 0.0, 2.0, 0.7, -0.1];
        let mut tape = Tape::new();
        let input = tape.constant(Matrix::row_vector(&x));
        let out = head.record(&mut tape, input).unwrap();
        let via_tape = tape.value(out).as_slice().to_vec();
        let direct = head.forward_vec(&x);
        for (a, b) in via_tape.iter().zip(&direct) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_input_gives_bias() {
        let mut head = init_head(4, 2, 1, 1).unwrap();
        head.params_mut()[1].value = Matrix::row_vector(&[0.5, -0.25]);
        assert_eq!(
            head.forward_sparse(&[1.0, 2.0, 3.0, 4.0], []),
            vec![0.5, -0.25]
        );
    }

    #[test]
    fn from_parts_round_trip() {
        let head = init_head(5, 2, 2, 3).unwrap();
        let again = Head::from_parts(2, 2, head.params().to_vec()).unwrap();
        assert_eq!(head, again);
        assert!(Head::from_parts(1, 2, head.params().to_vec()).is_err());
    }
}
