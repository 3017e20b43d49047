pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod kv;
pub mod layers;
pub mod model;
pub mod preprocess;
pub mod rng;
pub mod saliency;
pub mod tensor;
pub mod train;

mod alloc;
mod binio;

pub use alloc::retain_freed_memory;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::Tensor;
