//! PRNet: multi-scale wavelet-convolution encoder, channel-fusion-attention
//! skips and a UNet decoder for multi-class radiograph segmentation, built on
//! a small reverse-mode autodiff tensor library.

pub mod commands;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod loss;
pub mod metrics;
pub mod nn;
pub mod tensor;
pub mod train;
pub mod wavelet;
pub mod wtconv;

pub use error::{Error, Result};
pub use nn::{Module, PRNet, PRNetConfig};
pub use tensor::{no_grad, Element, GradTape, Tensor};
