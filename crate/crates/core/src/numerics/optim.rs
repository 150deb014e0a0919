//! Plain gradient descent with global-norm clipping.

use super::tape::{Gradients, Parameter};
use crate::error::{Error, Result};

pub const CLIP_NORM: f64 = 1.0;

/// Scales the whole gradient down to `clip_norm` when its global L2 norm
/// over every group exceeds it, then applies `value -= lr * grad`.
/// Parameters without a gradient entry are left untouched. Returns the
/// pre-clip norm.
pub fn sgd_step(
    groups: &mut [&mut [Parameter]],
    grads: &Gradients,
    lr: f64,
    clip_norm: f64,
) -> Result<f64> {
    let sq: f64 = groups
        .iter()
        .flat_map(|g| g.iter())
        .filter_map(|p| grads.get(&p.name))
        .map(|g| g.frobenius_sq())
        .sum();
    let norm = sq.sqrt();
    if !norm.is_finite() {
        return Err(Error::Numeric("non-finite gradient norm".into()));
    }
    let factor = if norm > clip_norm {
        clip_norm / norm
    } else {
        1.0
    };
    for p in groups.iter_mut().flat_map(|g| g.iter_mut()) {
        if let Some(g) = grads.get(&p.name) {
            for (v, d) in p.value.as_mut_slice().iter_mut().zip(g.as_slice()) {
                *v -= lr * factor * d;
            }
        }
    }
    Ok(norm)
}
