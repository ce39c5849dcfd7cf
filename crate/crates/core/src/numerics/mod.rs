//! Dense tensors, a reverse-mode tape, AdamW and a finite-difference
//! gradient checker. Everything the model differentiates through is a
//! primitive on [`Tape`].

mod gradcheck;
mod optim;
mod real;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, relative_error, GradCheckOptions, GradCheckReport, TensorCheck};
pub use optim::{AdamW, AdamWConfig};
pub use real::Real;
pub(crate) use tape::softmax_in_place as tape_softmax;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

/// Probabilities below this are clamped before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Variance epsilon used by layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-5;
