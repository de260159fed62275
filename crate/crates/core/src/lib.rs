//! Low-light RAW synthesis and noise-robust network kernels.
//!
//! - [`isp`]: invertible camera ISP (unprocessing, gamma, mosaic, quantization)
//! - [`noise`]: seeded physics-based sensor noise and low-light pair synthesis
//! - [`awd`]: fixed low-pass, spatial-variant and adaptive weighted downsampling
//! - [`scb`]: smooth-oriented convolutional block and its fold to one 3×3 conv
//! - [`dsl`]: feature disturbance metric, paired loss and a toy trainer
//!
//! All tensors are `f64`, row-major, channel-first.

pub mod awd;
pub mod cli;
pub mod dsl;
pub mod error;
pub mod gradcheck;
pub mod isp;
pub mod noise;
pub mod ops;
pub mod optim;
pub mod scb;
pub mod tensor;
pub mod tnsr;

pub use error::{Error, Result};
pub use tensor::{ConvWeights, Tensor};
