//! Rectified linear activation.

use crate::error::{Error, Result};
use crate::tensor::{Elem, Tensor};

/// Elementwise `max(0, x)`.
pub fn relu_forward<E: Elem>(x: &Tensor<E>) -> Tensor<E> {
    let mut y = x.clone();
    for v in y.data_mut() {
        if *v < E::zero() {
            *v = E::zero();
        }
    }
    y
}

/// Masks the upstream gradient by `x > 0`; the subgradient at exactly 0 is 0.
pub fn relu_vjp<E: Elem>(x: &Tensor<E>, grad: &Tensor<E>) -> Result<Tensor<E>> {
    if grad.shape() != x.shape() {
        return Err(Error::Shape("relu vjp: gradient shape differs from input".into()));
    }
    let mut gx = grad.clone();
    for (g, &v) in gx.data_mut().iter_mut().zip(x.data()) {
        if v <= E::zero() {
            *g = E::zero();
        }
    }
    Ok(gx)
}
