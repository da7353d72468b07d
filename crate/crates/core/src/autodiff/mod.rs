//! Reverse-mode automatic differentiation over dense row-major tensors.

mod adam;
mod gradcheck;
pub mod kernels;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{check_gradients, op_suite, GradCheck, OpCheck, FD_FLOOR, FD_STEP};
pub use tape::{Gradients, Tape, Unary, Var, PAD};
pub use tensor::Tensor;
