//! Temporal average pooling.

use crate::error::{Error, Result};
use crate::ops::arith;
use crate::tensor::{lit, Elem, Tensor};

/// Output length for the given pooling geometry.
pub fn pooled_len(t: usize, window: usize, stride: usize) -> usize {
    (t - window) / stride + 1
}

/// Mean over each window of the time axis; trailing samples that do not fill
/// a window are dropped.
pub fn avg_pool1d_forward<E: Elem>(
    x: &Tensor<E>,
    window: usize,
    stride: usize,
) -> Result<Tensor<E>> {
    let (n, c, t) = x.dims3()?;
    if window == 0 || stride == 0 {
        return Err(Error::InvalidArgument("avg_pool1d: window and stride must be >= 1".into()));
    }
    if window > t {
        return Err(Error::InvalidArgument(format!(
            "avg_pool1d: window {window} exceeds input length {t}"
        )));
    }
    let t_out = pooled_len(t, window, stride);
    let inv_w = lit::<E>(window as f64).recip();
    let mut y = Tensor::zeros(&[n, c, t_out])?;
    for ni in 0..n {
        for ci in 0..c {
            let src = x.row3(ni, ci);
            let dst = y.row3_mut(ni, ci);
            for (o, d) in dst.iter_mut().enumerate() {
                let start = o * stride;
                *d = arith::sum(&src[start..start + window]) * inv_w;
            }
        }
    }
    Ok(y)
}

/// Distributes `grad / window` to every covered input position; overlapping
/// windows accumulate.
pub fn avg_pool1d_vjp<E: Elem>(
    grad: &Tensor<E>,
    t_in: usize,
    window: usize,
    stride: usize,
) -> Result<Tensor<E>> {
    let (n, c, t_out) = grad.dims3()?;
    if window == 0 || stride == 0 || window > t_in {
        return Err(Error::InvalidArgument("avg_pool1d vjp: bad geometry".into()));
    }
    if t_out != pooled_len(t_in, window, stride) {
        return Err(Error::Shape(format!(
            "avg_pool1d vjp: gradient length {t_out} does not match pooled length {}",
            pooled_len(t_in, window, stride)
        )));
    }
    let inv_w = lit::<E>(window as f64).recip();
    let mut gx = Tensor::zeros(&[n, c, t_in])?;
    for ni in 0..n {
        for ci in 0..c {
            let g_row = grad.row3(ni, ci);
            let dst = gx.row3_mut(ni, ci);
            for (o, &g) in g_row.iter().enumerate() {
                let share = g * inv_w;
                let start = o * stride;
                for d in &mut dst[start..start + window] {
                    *d = *d + share;
                }
            }
        }
    }
    Ok(gx)
}

/// Mean over the whole time axis: `[N, C, T] -> [N, C]`.
pub fn global_avg_pool_forward<E: Elem>(x: &Tensor<E>) -> Result<Tensor<E>> {
    let (n, c, t) = x.dims3()?;
    let inv_t = lit::<E>(t as f64).recip();
    let mut y = Tensor::zeros(&[n, c])?;
    for ni in 0..n {
        for ci in 0..c {
            y.data_mut()[ni * c + ci] = arith::sum(x.row3(ni, ci)) * inv_t;
        }
    }
    Ok(y)
}

/// Spreads `grad / T` across the time axis.
pub fn global_avg_pool_vjp<E: Elem>(grad: &Tensor<E>, t_in: usize) -> Result<Tensor<E>> {
    let (n, c) = grad.dims2()?;
    let inv_t = lit::<E>(t_in as f64).recip();
    let mut gx = Tensor::zeros(&[n, c, t_in])?;
    for ni in 0..n {
        for ci in 0..c {
            let share = grad.at2(ni, ci) * inv_t;
            gx.row3_mut(ni, ci).fill(share);
        }
    }
    Ok(gx)
}
