//! Dense tensors with reverse-mode automatic differentiation.

pub mod checkpoint;
mod ops;
mod params;
mod scalar;
mod tape;
#[allow(clippy::module_inception)]
mod tensor;

pub use params::{ParamBuilder, ParamEntry, ParamId, ParamStore, INIT_STD};
pub use scalar::Scalar;
pub use tape::{FlopCount, Gradients, Tape, Var};
pub use tensor::Tensor;
