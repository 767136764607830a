//! From-scratch engine for classifying multichannel clinical time series with
//! densely connected, dilated causal 1-D convolution networks.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`] / [`ops`] / [`tape`] / [`param`]: dense tensors, the fixed set
//!   of differentiable kernels, and reverse-mode gradient computation.
//! - [`model`]: the DDxNet classifier: stem, densely connected blocks with
//!   bottlenecks and dilated causal convolutions, temporal-aggregation
//!   transitions, and a linear head.
//! - [`optim`]: Adam / SGD-with-momentum updates, gradient clipping, and
//!   learning-rate schedules.
//! - [`data`]: dataset loading (CSV and binary), windowing, normalization,
//!   stratified splitting, batching, and synthetic task generation.
//! - [`metrics`]: confusion matrices, accuracy, macro-F1, binary AUROC, and
//!   canonical JSON reports.
//! - [`checkpoint`]: versioned bit-exact persistence of config, parameters,
//!   normalization statistics, and optimizer state.
//! - [`train`]: the training driver used by the CLI.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod optim;
pub mod param;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Elem, Tensor};
