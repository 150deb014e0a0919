//! Reverse-mode differentiation over a recorded sequence of matrix ops.
//!
//! A [`Tape`] is filled by a forward pass and consumed by exactly one call
//! to [`Tape::backward`]. Trainable values enter through [`Tape::param`],
//! keyed by parameter name, so a parameter used in several places of one
//! recording is a single leaf and its gradient is summed.

use std::collections::HashMap;

use super::matrix::{gelu_derivative, Matrix};
use crate::error::{Error, Result};

/// A trainable tensor with its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Matrix,
    pub grad: Matrix,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Matrix) -> Self {
        let grad = Matrix::zeros(value.rows(), value.cols());
        Self {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.as_mut_slice().fill(0.0);
    }

    pub fn numel(&self) -> usize {
        self.value.len()
    }
}

pub fn zero_grads(params: &mut [Parameter]) {
    params.iter_mut().for_each(Parameter::zero_grad);
}

/// Handle to a value recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Constant,
    Param(usize),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    AddConst(Var),
    Scale(Var, f64),
    MulConst(Var, Vec<f64>),
    Gelu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        xhat: Matrix,
        inv_std: Vec<f64>,
    },
    GatherRows(Var, Vec<usize>),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Sum(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Matrix,
    },
    Mse {
        pred: Var,
        targets: Vec<f64>,
    },
}

struct Node {
    value: Matrix,
    op: Op,
}

/// Gradients of one backward pass, keyed by parameter name.
#[derive(Debug, Default)]
pub struct Gradients {
    by_name: HashMap<String, Matrix>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.by_name.get(name)
    }

    pub fn len(&self) -> usize {
        self.by_name.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_name.is_empty()
    }

    /// Adds each gradient into the matching parameter's `grad`.
    pub fn accumulate_into(&self, params: &mut [Parameter]) -> Result<()> {
        for p in params.iter_mut() {
            if let Some(g) = self.by_name.get(&p.name) {
                p.grad.add_assign(g)?;
            }
        }
        Ok(())
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_names: Vec<String>,
    param_index: HashMap<String, Var>,
    consumed: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Constant)
    }

    /// Records a trainable leaf. Re-registering the same name returns the
    /// existing leaf.
    pub fn param(&mut self, p: &Parameter) -> Var {
        if let Some(&v) = self.param_index.get(&p.name) {
            return v;
        }
        let idx = self.param_names.len();
        self.param_names.push(p.name.clone());
        let v = self.push(p.value.clone(), Op::Param(idx));
        self.param_index.insert(p.name.clone(), v);
        v
    }

    /// Records `p` as trainable or as a plain constant.
    pub fn param_or_const(&mut self, p: &Parameter, trainable: bool) -> Var {
        if trainable {
            self.param(p)
        } else {
            self.constant(p.value.clone())
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul_t(self.value(b))?;
        Ok(self.push(v, Op::MatMulT(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    /// Broadcasts the `1 x cols` value `row` over every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let v = self.value(a).add_row(self.value(row))?;
        Ok(self.push(v, Op::AddRow(a, row)))
    }

    /// Adds a fixed matrix that carries no gradient (attention masks).
    pub fn add_const(&mut self, a: Var, c: &Matrix) -> Result<Var> {
        let v = self.value(a).add(c)?;
        Ok(self.push(v, Op::AddConst(a)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).scale(s);
        self.push(v, Op::Scale(a, s))
    }

    /// Elementwise product with a fixed multiplier (dropout masks).
    pub fn mul_const(&mut self, a: Var, mask: Vec<f64>) -> Result<Var> {
        let x = self.value(a);
        if mask.len() != x.len() {
            return Err(Error::Dimension(format!(
                "mask of {} entries on {}x{}",
                mask.len(),
                x.rows(),
                x.cols()
            )));
        }
        let data = x.as_slice().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let v = Matrix::from_raw(x.rows(), x.cols(), data);
        Ok(self.push(v, Op::MulConst(a, mask)))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).gelu();
        self.push(v, Op::Gelu(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let v = self.value(a).softmax_rows();
        self.push(v, Op::Softmax(a))
    }

    /// Row layer norm with `1 x cols` gain and bias leaves.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (_, xhat, inv_std) = self.value(x).layer_norm_parts(
            self.value(gain).as_slice(),
            &vec![0.0; self.value(gain).len()],
            eps,
        )?;
        let gain_row = self.value(gain).as_slice().to_vec();
        let mut scaled = xhat.clone();
        for r in 0..scaled.rows() {
            for (v, g) in scaled.row_mut(r).iter_mut().zip(&gain_row) {
                *v *= g;
            }
        }
        let normed = self.push(
            scaled,
            Op::LayerNorm {
                x,
                gain,
                xhat,
                inv_std,
            },
        );
        self.add_row(normed, bias)
    }

    /// Selects rows of `a` (embedding lookup); repeated indices allowed.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let src = self.value(a);
        let cols = src.cols();
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            if i >= src.rows() {
                return Err(Error::Index {
                    index: i,
                    limit: src.rows(),
                });
            }
            data.extend_from_slice(src.row(i));
        }
        let v = Matrix::from_raw(idx.len(), cols, data);
        Ok(self.push(v, Op::GatherRows(a, idx.to_vec())))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Result<Var> {
        let src = self.value(a);
        if start + width > src.cols() {
            return Err(Error::Dimension(format!(
                "columns {start}..{} of a {}-column matrix",
                start + width,
                src.cols()
            )));
        }
        let mut data = Vec::with_capacity(src.rows() * width);
        for r in 0..src.rows() {
            data.extend_from_slice(&src.row(r)[start..start + width]);
        }
        let v = Matrix::from_raw(src.rows(), width, data);
        Ok(self.push(v, Op::SliceCols(a, start)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            return Err(Error::Dimension(
                "concat_cols with unequal row counts".into(),
            ));
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let v = Matrix::from_raw(rows, cols, data);
        Ok(self.push(v, Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.value(parts[0]).cols();
        if parts.iter().any(|&p| self.value(p).cols() != cols) {
            return Err(Error::Dimension(
                "concat_rows with unequal column counts".into(),
            ));
        }
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.value(p).as_slice());
        }
        let rows = data.len() / cols.max(1);
        let v = Matrix::from_raw(rows, cols, data);
        Ok(self.push(v, Op::ConcatRows(parts.to_vec())))
    }

    /// Sum of all entries, as a `1 x 1` value.
    pub fn sum(&mut self, a: Var) -> Var {
        let v = Matrix::from_raw(1, 1, vec![self.value(a).sum()]);
        self.push(v, Op::Sum(a))
    }

    /// Mean softmax cross-entropy over rows of `logits`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let l = self.value(logits);
        if targets.len() != l.rows() {
            return Err(Error::Dimension(format!(
                "{} targets for {} logit rows",
                targets.len(),
                l.rows()
            )));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= l.cols()) {
            return Err(Error::Index {
                index: t,
                limit: l.cols(),
            });
        }
        let probs = l.softmax_rows();
        let mut loss = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            let row = l.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[t];
        }
        loss /= targets.len() as f64;
        let v = Matrix::from_raw(1, 1, vec![loss]);
        Ok(self.push(
            v,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        ))
    }

    /// Mean squared error between a single-column prediction and targets.
    pub fn mse(&mut self, pred: Var, targets: &[f64]) -> Result<Var> {
        let p = self.value(pred);
        if p.cols() != 1 || p.rows() != targets.len() {
            return Err(Error::Dimension(format!(
                "mse of {}x{} against {} targets",
                p.rows(),
                p.cols(),
                targets.len()
            )));
        }
        let loss = p
            .as_slice()
            .iter()
            .zip(targets)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / targets.len() as f64;
        let v = Matrix::from_raw(1, 1, vec![loss]);
        Ok(self.push(
            v,
            Op::Mse {
                pred,
                targets: targets.to_vec(),
            },
        ))
    }

    /// Back-propagates from the scalar `loss`. A tape can be differentiated
    /// once; a second call fails with [`Error::StaleTape`].
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::StaleTape);
        }
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(Error::Dimension(format!(
                "backward needs a 1x1 loss, got {}x{}",
                lv.rows(),
                lv.cols()
            )));
        }
        if !lv.is_finite() {
            return Err(Error::Numeric("non-finite loss".into()));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));
        let mut out = Gradients::default();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Constant => {}
                Op::Param(idx) => {
                    out.by_name.insert(self.param_names[*idx].clone(), g);
                }
                Op::MatMul(a, b) => {
                    let da = g.matmul_t(&self.nodes[b.0].value)?;
                    let db = self.nodes[a.0].value.t_matmul(&g)?;
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::MatMulT(a, b) => {
                    let da = g.matmul(&self.nodes[b.0].value)?;
                    let db = g.t_matmul(&self.nodes[a.0].value)?;
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g);
                }
                Op::AddRow(a, row) => {
                    let mut db = vec![0.0; g.cols()];
                    for r in 0..g.rows() {
                        for (d, v) in db.iter_mut().zip(g.row(r)) {
                            *d += v;
                        }
                    }
                    acc(&mut grads, *row, Matrix::from_raw(1, g.cols(), db));
                    acc(&mut grads, *a, g);
                }
                Op::AddConst(a) => acc(&mut grads, *a, g),
                Op::Scale(a, s) => acc(&mut grads, *a, g.scale(*s)),
                Op::MulConst(a, mask) => {
                    let data = g.as_slice().iter().zip(mask).map(|(v, m)| v * m).collect();
                    acc(&mut grads, *a, Matrix::from_raw(g.rows(), g.cols(), data));
                }
                Op::Gelu(a) => {
                    let x = &self.nodes[a.0].value;
                    let data = g
                        .as_slice()
                        .iter()
                        .zip(x.as_slice())
                        .map(|(gv, &xv)| gv * gelu_derivative(xv))
                        .collect();
                    acc(&mut grads, *a, Matrix::from_raw(g.rows(), g.cols(), data));
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let mut dx = Matrix::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for (c, d) in dx.row_mut(r).iter_mut().enumerate() {
                            *d = yr[c] * (gr[c] - dot);
                        }
                    }
                    acc(&mut grads, *a, dx);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    xhat,
                    inv_std,
                } => {
                    let gain_row = self.nodes[gain.0].value.as_slice();
                    let cols = g.cols();
                    let n = cols as f64;
                    let mut dgain = vec![0.0; cols];
                    let mut dx = Matrix::zeros(g.rows(), cols);
                    for r in 0..g.rows() {
                        let gr = g.row(r);
                        let hr = xhat.row(r);
                        let mut sum_dh = 0.0;
                        let mut sum_dh_h = 0.0;
                        for c in 0..cols {
                            dgain[c] += gr[c] * hr[c];
                            let dh = gr[c] * gain_row[c];
                            sum_dh += dh;
                            sum_dh_h += dh * hr[c];
                        }
                        let k = inv_std[r] / n;
                        for (c, d) in dx.row_mut(r).iter_mut().enumerate() {
                            let dh = gr[c] * gain_row[c];
                            *d = k * (n * dh - sum_dh - hr[c] * sum_dh_h);
                        }
                    }
                    acc(&mut grads, *gain, Matrix::from_raw(1, cols, dgain));
                    acc(&mut grads, *x, dx);
                }
                Op::GatherRows(a, idx) => {
                    let src = &self.nodes[a.0].value;
                    let mut da = Matrix::zeros(src.rows(), src.cols());
                    for (r, &i) in idx.iter().enumerate() {
                        for (d, v) in da.row_mut(i).iter_mut().zip(g.row(r)) {
                            *d += v;
                        }
                    }
                    acc(&mut grads, *a, da);
                }
                Op::SliceCols(a, start) => {
                    let src = &self.nodes[a.0].value;
                    let mut da = Matrix::zeros(src.rows(), src.cols());
                    for r in 0..g.rows() {
                        da.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                    }
                    acc(&mut grads, *a, da);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.nodes[p.0].value.cols();
                        let mut dp = Matrix::zeros(g.rows(), w);
                        for r in 0..g.rows() {
                            dp.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + w]);
                        }
                        offset += w;
                        acc(&mut grads, p, dp);
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let (rows, cols) = self.nodes[p.0].value.shape();
                        let span = rows * cols;
                        let dp = Matrix::from_raw(
                            rows,
                            cols,
                            g.as_slice()[offset..offset + span].to_vec(),
                        );
                        offset += span;
                        acc(&mut grads, p, dp);
                    }
                }
                Op::Sum(a) => {
                    let (r, c) = self.nodes[a.0].value.shape();
                    acc(&mut grads, *a, Matrix::filled(r, c, g.get(0, 0)));
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    probs,
                } => {
                    let scale = g.get(0, 0) / targets.len() as f64;
                    let mut d = probs.clone();
                    for (r, &t) in targets.iter().enumerate() {
                        let row = d.row_mut(r);
                        row[t] -= 1.0;
                        row.iter_mut().for_each(|v| *v *= scale);
                    }
                    acc(&mut grads, *logits, d);
                }
                Op::Mse { pred, targets } => {
                    let p = &self.nodes[pred.0].value;
                    let scale = 2.0 * g.get(0, 0) / targets.len() as f64;
                    let data = p
                        .as_slice()
                        .iter()
                        .zip(targets)
                        .map(|(a, b)| scale * (a - b))
                        .collect();
                    acc(&mut grads, *pred, Matrix::from_raw(p.rows(), 1, data));
                }
            }
        }
        Ok(out)
    }
}

fn acc(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (a, b) in existing.as_mut_slice().iter_mut().zip(g.as_slice()) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}
