//! Dense tensors and tape-based reverse-mode differentiation.

mod conv;
mod gradcheck;
mod real;
mod tape;
#[allow(clippy::module_inception)]
mod tensor;

pub use conv::ConvGeom;
pub use gradcheck::{grad_check, GradCheckReport, GradChecker};
pub use real::Real;
pub use tape::{Primitive, Tape, Var};
pub use tensor::Tensor;

#[allow(unused_imports)]
pub(crate) use real::{gemm, Mat};
