//! Multi-channel speech enhancement core: STFT frontend, reverse-mode
//! autodiff, the graph-convolutional U-Net, losses, room acoustics
//! simulation, objective metrics and the training step.
//!
//! Builds on `core` + `alloc`; the default `std` feature adds rayon
//! parallelism and `std::error::Error` impls.

#![cfg_attr(not(feature = "std"), no_std)]
// negated comparisons double as NaN rejection
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod autograd;
pub mod enhance;
pub mod error;
pub mod fft;
pub mod gradcheck;
pub mod graph;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod optim;
mod par;
pub mod scalar;
pub mod signal;
pub mod sim;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;
