pub mod augment;
pub mod autodiff;
pub mod error;
pub mod metrics;
pub mod model;
pub mod partition;
pub mod persist;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{DType, Element, Tensor};
