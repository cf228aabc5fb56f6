pub mod data;
pub mod desk;
pub mod efficiency;
pub mod error;
pub mod geometry;
pub mod mae;
pub mod memtrack;
pub mod model;
pub mod nn;
pub mod seed;
pub mod tensor;
pub mod tokenizer;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{ParamId, ParamStore, Scalar, Tape, Tensor, Var};
