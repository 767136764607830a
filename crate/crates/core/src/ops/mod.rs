//! Differentiable kernels: forward passes and their vector-Jacobian products.
//!
//! Every kernel is a pure function; the tape in [`crate::tape`] records calls
//! and replays these VJPs in reverse. All kernels use fixed reduction orders,
//! so identical inputs produce bitwise-identical outputs.

pub mod arith;
mod act;
mod concat;
mod conv;
mod linear;
mod loss;
mod norm;
mod pool;

pub use act::{relu_forward, relu_vjp};
pub use concat::{concat_channels_forward, concat_channels_vjp};
pub use conv::{conv1d_causal_forward, conv1d_causal_vjp};
pub use linear::{linear_forward, linear_vjp};
pub use loss::{sigmoid, sigmoid_bce, softmax_cross_entropy};
pub use norm::{
    batchnorm1d_eval_forward, batchnorm1d_eval_vjp, batchnorm1d_train_forward,
    batchnorm1d_train_vjp, BnBatchStats, BN_EPS, BN_MOMENTUM,
};
pub use pool::{
    avg_pool1d_forward, avg_pool1d_vjp, global_avg_pool_forward, global_avg_pool_vjp, pooled_len,
};
