//! Dense tensors with reverse-mode differentiation.
//!
//! [`Tensor`] is the value type, [`Tape`] records forward operations and
//! replays them in reverse, and [`gradcheck`] verifies the backward rules
//! against central finite differences.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{
    analytic_gradients, compare_gradients, grad_check, numeric_gradients, GradCheckEntry,
    GradCheckReport,
};
pub use tape::{Gradients, Tape, ValueId};
pub use tensor::Tensor;
