//! Joint building extraction and building change detection on bi-temporal
//! imagery.
//!
//! The crate is layered bottom-up:
//!
//! - [`tensor`], [`autodiff`], [`ops`]: a dense NCHW tensor, a reverse-mode
//!   tape, and differentiable kernels.
//! - [`nn`]: convolution, pooling, linear, layer norm, attention and Adam.
//! - [`blocks`]: the multi-scale fusion branch, the parameter-free
//!   spatial-spectral attention branch, the dual-branch extractor combining
//!   them, and the differential fusion module.
//! - [`network`]: the siamese encoder, query decoder, mask head and loss.
//! - [`metrics`], [`io`], [`train`]: evaluation counts, file formats, the
//!   synthetic dataset, and the training loop.
//!
//! [`gradcheck`] holds the finite-difference oracle used to verify every
//! backward pass.

pub mod autodiff;
pub mod blocks;
pub mod error;
pub mod gradcheck;
pub mod io;
pub mod metrics;
pub mod network;
pub mod nn;
pub mod ops;
pub mod param;
pub mod rng;
pub mod tensor;
pub mod train;

pub use autodiff::{Tape, Var};
pub use error::{Error, Result};
pub use param::{ParamId, ParamStore};
pub use rng::Rng;
pub use tensor::{Element, Shape, Tensor};
