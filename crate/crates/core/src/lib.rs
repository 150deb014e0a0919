//! Fine-tune a small transformer encoder on synthetic classification and
//! regression tasks, then measure how much of its sentence representation
//! is actually needed: which token, which hidden dimensions, which layer.

pub mod cli_io;
pub mod encoder;
pub mod error;
pub mod finetune;
pub mod numerics;
pub mod probe;
pub mod tasks;

pub use error::{Error, Result};
