//! Minimal reverse-mode differentiation engine: tensors, a recording
//! graph, Adam, a warmup-cosine schedule and finite-difference checks.

mod gemm;
mod gradcheck;
mod graph;
mod optim;
mod tensor;

pub use gradcheck::{compare_gradients, grad_check, GradCheckReport, DENOM_FLOOR};
pub use graph::{Graph, Var};
pub use optim::{adam_step, AdamState, LrSchedule};
pub use tensor::{Gradients, ParamId, ParamStore, Tensor};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EngineError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("softmax row {0} has no unmasked entry")]
    DegenerateRow(usize),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("invalid argument: {0}")]
    Argument(String),
}
