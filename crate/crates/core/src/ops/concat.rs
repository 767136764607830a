//! Channel-axis concatenation, the dense-connectivity primitive.

use crate::error::{Error, Result};
use crate::tensor::{Elem, Tensor};

/// Concatenates along the channel axis in argument order.
pub fn concat_channels_forward<E: Elem>(parts: &[&Tensor<E>]) -> Result<Tensor<E>> {
    if parts.is_empty() {
        return Err(Error::InvalidArgument("concat_channels: no parts given".into()));
    }
    let (n, _, t) = parts[0].dims3()?;
    let mut c_total = 0;
    for p in parts {
        let (pn, pc, pt) = p.dims3()?;
        if pn != n || pt != t {
            return Err(Error::Shape(format!(
                "concat_channels: part with shape {:?} does not match batch {n} / time {t}",
                p.shape()
            )));
        }
        c_total += pc;
    }
    let mut y = Tensor::zeros(&[n, c_total, t])?;
    for ni in 0..n {
        let mut c_off = 0;
        for p in parts {
            let pc = p.shape()[1];
            for ci in 0..pc {
                y.row3_mut(ni, c_off + ci).copy_from_slice(p.row3(ni, ci));
            }
            c_off += pc;
        }
    }
    Ok(y)
}

/// Splits the upstream gradient back into the recorded channel extents.
pub fn concat_channels_vjp<E: Elem>(grad: &Tensor<E>, splits: &[usize]) -> Result<Vec<Tensor<E>>> {
    let (n, c, t) = grad.dims3()?;
    let total: usize = splits.iter().sum();
    if total != c {
        return Err(Error::Shape(format!(
            "concat_channels vjp: splits sum to {total}, gradient has {c} channels"
        )));
    }
    let mut out = Vec::with_capacity(splits.len());
    let mut c_off = 0;
    for &pc in splits {
        let mut g = Tensor::zeros(&[n, pc, t])?;
        for ni in 0..n {
            for ci in 0..pc {
                g.row3_mut(ni, ci).copy_from_slice(grad.row3(ni, c_off + ci));
            }
        }
        out.push(g);
        c_off += pc;
    }
    Ok(out)
}
