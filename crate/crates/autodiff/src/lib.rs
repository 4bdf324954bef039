//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records primitive applications against a read-only
//! [`ParamStore`]; [`Tape::backward`] returns per-parameter [`Gradients`]
//! that are accumulated into the store and applied by [`Adam`]. Several
//! tapes may share one store concurrently.

mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{gradient_check, GradCheckReport, REL_ERROR_FLOOR};
pub use params::{Adam, Grad, Gradients, ParamId, ParamStore, Parameter};
pub use tape::{dropout_mask, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum AutodiffError {
    #[error("{op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("variable does not belong to this tape")]
    ForeignVar,
    #[error("backward needs a 1x1 loss, got {rows}x{cols}")]
    NotScalar { rows: usize, cols: usize },
    #[error("closure is not deterministic: losses {first} and {second}")]
    NonDeterministic { first: f64, second: f64 },
    #[error("duplicate parameter name {0}")]
    DuplicateParameter(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = AutodiffError> = std::result::Result<T, E>;
