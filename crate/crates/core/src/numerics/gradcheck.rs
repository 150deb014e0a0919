//! Central finite-difference verification of tape gradients.

use super::tape::{Parameter, Tape, Var};
use crate::error::{Error, Result};

/// Perturbation used for central differences.
pub const FD_STEP: f64 = 1e-3;

/// Largest model the checker will perturb one scalar at a time.
pub const MAX_CHECKED_SCALARS: usize = 5_000;

/// Gradient magnitudes below this are compared on an absolute scale.
const RELATIVE_FLOOR: f64 = 1e-2;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Parameter name and flat index where the largest error occurred.
    pub worst: Option<(String, usize)>,
    pub scalars_checked: usize,
    pub tolerance: f64,
    pub passed: bool,
}

/// Compares tape gradients of `loss_fn` against central differences for
/// every scalar in `params`.
///
/// The error for one scalar is `|analytic - numeric| / max(|analytic|,
/// |numeric|, 1e-2)`. The check passes when the maximum is strictly below
/// `tolerance`, so a tolerance of zero never passes.
pub fn finite_diff_check<F>(
    params: &mut [Parameter],
    loss_fn: F,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Parameter]) -> Result<Var>,
{
    let total: usize = params.iter().map(Parameter::numel).sum();
    if total > MAX_CHECKED_SCALARS {
        return Err(Error::Validation(format!(
            "{total} scalars exceed the finite-difference limit of {MAX_CHECKED_SCALARS}"
        )));
    }

    let mut tape = Tape::new();
    let loss = loss_fn(&mut tape, params)?;
    let grads = tape.backward(loss)?;

    let eval = |params: &[Parameter]| -> Result<f64> {
        let mut tape = Tape::new();
        let loss = loss_fn(&mut tape, params)?;
        let v = tape.value(loss).get(0, 0);
        if !v.is_finite() {
            return Err(Error::Numeric("non-finite loss during perturbation".into()));
        }
        Ok(v)
    };

    let mut max_err = 0.0f64;
    let mut worst = None;
    for p in 0..params.len() {
        let analytic = grads.get(&params[p].name).cloned().unwrap_or_else(|| {
            super::Matrix::zeros(params[p].value.rows(), params[p].value.cols())
        });
        for i in 0..params[p].numel() {
            let original = params[p].value.as_slice()[i];
            params[p].value.as_mut_slice()[i] = original + FD_STEP;
            let plus = eval(params);
            params[p].value.as_mut_slice()[i] = original - FD_STEP;
            let minus = eval(params);
            params[p].value.as_mut_slice()[i] = original;
            let numeric = (plus? - minus?) / (2.0 * FD_STEP);
            let a = analytic.as_slice()[i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
            if err > max_err || worst.is_none() {
                max_err = max_err.max(err);
                worst = Some((params[p].name.clone(), i));
            }
        }
    }

    Ok(GradCheckReport {
        max_relative_error: max_err,
        worst,
        scalars_checked: total,
        tolerance,
        passed: max_err < tolerance,
    })
}
