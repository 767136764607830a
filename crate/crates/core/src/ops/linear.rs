//! Fully connected layer `y = x * W^T + b`.

use crate::error::{Error, Result};
use crate::ops::arith;
use crate::tensor::{Elem, Tensor};

fn check_args<E: Elem>(
    x: &Tensor<E>,
    w: &Tensor<E>,
    b: &Tensor<E>,
) -> Result<(usize, usize, usize)> {
    let (n, f) = x.dims2()?;
    let (o, wf) = w.dims2()?;
    if wf != f {
        return Err(Error::Shape(format!(
            "linear: input has {f} features but weight expects {wf}"
        )));
    }
    if b.dims1()? != o {
        return Err(Error::Shape(format!(
            "linear: weight has {o} outputs but bias has {}",
            b.numel()
        )));
    }
    Ok((n, f, o))
}

pub fn linear_forward<E: Elem>(x: &Tensor<E>, w: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    let (n, f, o) = check_args(x, w, b)?;
    let mut y = Tensor::zeros(&[n, o])?;
    for ni in 0..n {
        let x_row = &x.data()[ni * f..(ni + 1) * f];
        for oi in 0..o {
            let w_row = &w.data()[oi * f..(oi + 1) * f];
            y.data_mut()[ni * o + oi] = arith::dot(x_row, w_row) + b.data()[oi];
        }
    }
    Ok(y)
}

/// Gradients `(gx, gw, gb)` for upstream `grad` of shape `[N, O]`.
pub fn linear_vjp<E: Elem>(
    x: &Tensor<E>,
    w: &Tensor<E>,
    b: &Tensor<E>,
    grad: &Tensor<E>,
) -> Result<(Tensor<E>, Tensor<E>, Tensor<E>)> {
    let (n, f, o) = check_args(x, w, b)?;
    if grad.shape() != [n, o] {
        return Err(Error::Shape(format!(
            "linear vjp: upstream gradient shape {:?} != output shape {:?}",
            grad.shape(),
            [n, o]
        )));
    }
    let mut gx = Tensor::zeros(&[n, f])?;
    let mut gw = Tensor::zeros(&[o, f])?;
    let mut gb = Tensor::zeros(&[o])?;
    for ni in 0..n {
        let x_row = &x.data()[ni * f..(ni + 1) * f];
        let g_row = &grad.data()[ni * o..(ni + 1) * o];
        let gx_row = {
            let d = gx.data_mut();
            &mut d[ni * f..(ni + 1) * f]
        };
        for (oi, &g) in g_row.iter().enumerate() {
            arith::axpy(gx_row, g, &w.data()[oi * f..(oi + 1) * f]);
        }
        for (oi, &g) in g_row.iter().enumerate() {
            let gw_row = &mut gw.data_mut()[oi * f..(oi + 1) * f];
            arith::axpy(gw_row, g, x_row);
            gb.data_mut()[oi] = gb.data_mut()[oi] + g;
        }
    }
    Ok((gx, gw, gb))
}
