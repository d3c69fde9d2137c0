//! Core library: dual-tree complex wavelet transforms, invertible
//! wavelet-domain resampling blocks, a small encoder-decoder segmentation
//! network with hand-written backward passes, synthetic data, metrics, and a
//! trainer.

pub mod data;
pub mod error;
pub mod metrics;
pub mod network;
pub mod selfcheck;
pub mod trainer;
pub mod blocks;
pub mod io;
pub mod tensor;
pub mod wavelet;

pub use error::{CoreError, Result};
pub use tensor::{Scalar, Tensor};
