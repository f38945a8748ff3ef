//! Reverse-mode automatic differentiation over [`Tensor`](crate::Tensor)s.

mod gradcheck;
pub(crate) mod kernels;
mod tape;

pub use gradcheck::{grad_check, grad_check_many};
pub use kernels::GELU_COEFF;
pub use tape::{Activation, CustomOp, ElementwiseOp, Reduce, Tape, Var};
