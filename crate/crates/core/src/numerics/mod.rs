//! Dense `f64` matrices and reverse-mode gradients.

mod gradcheck;
mod matrix;
mod optim;
mod tape;

pub use gradcheck::{finite_diff_check, GradCheckReport, FD_STEP};
pub use matrix::{gelu_scalar, Matrix};
pub use optim::{sgd_step, CLIP_NORM};
pub use tape::{zero_grads, Gradients, Parameter, Tape, Var};
