pub mod attention;
pub mod bench;
pub mod checkpoint;
pub mod data;
pub mod model;
pub mod params;
pub mod rng;
pub mod stgen;
pub mod tensor;
pub mod training;

pub use tensor::{Tape, Tensor, TensorError};
