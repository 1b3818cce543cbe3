//! Small reverse-mode autodiff engine over dense `f64` matrices.

mod gradcheck;
mod nn;
mod params;
mod tape;
mod tensor;


use thiserror::Error;

pub use gradcheck::{grad_check, relative_error, GradCheckOptions, GradCheckReport, REL_ERROR_FLOOR};
pub use nn::{Gru, LayerNorm, Linear};
pub use params::{Init, ParamId, ParamStore, Parameter};
pub use tape::{Gradients, Tape, Var, LAYER_NORM_EPS};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiffError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch { op: &'static str, left: [usize; 2], right: [usize; 2] },
    #[error("index {index} out of range in {op} (bound {bound})")]
    IndexOutOfRange { op: &'static str, index: usize, bound: usize },
    #[error("loss is not deterministic: {first} then {second}")]
    NonDeterministicLoss { first: f64, second: f64 },
    #[error("gradient check has no coordinates to probe")]
    EmptyCheck,
}
