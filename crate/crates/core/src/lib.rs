//! Single-image pyramid GAN: training, sampling, manipulation and evaluation.

pub mod applications;
pub mod error;
pub mod imaging;
pub mod metrics;
pub mod netspec;
mod pipeline;
pub mod rng;
pub mod sampling;
pub mod store;
pub mod training;

pub use error::{Error, Result};
