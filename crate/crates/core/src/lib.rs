pub mod diffcore;
pub mod discretize;
pub mod envs;
pub mod error;
pub mod harness;
pub mod rl;
pub mod searchspace;
pub mod supernet;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
