//! Dilated causal 1-D convolution.
//!
//! Output position `t` reads inputs `{t, t-d, ..., t-(K-1)d}` only, as if the
//! input were left-padded with `(K-1)*d` zeros, so output length equals input
//! length and no tap ever looks forward in time.

use crate::error::{Error, Result};
use crate::ops::arith;
use crate::tensor::{Elem, Tensor};

fn check_args<E: Elem>(
    x: &Tensor<E>,
    w: &Tensor<E>,
    b: &Tensor<E>,
    dilation: usize,
) -> Result<(usize, usize, usize, usize, usize)> {
    if dilation == 0 {
        return Err(Error::InvalidArgument("conv1d_causal: dilation must be >= 1".into()));
    }
    let (n, c_in, t) = x.dims3()?;
    let (c_out, w_cin, k) = w.dims3()?;
    if w_cin != c_in {
        return Err(Error::Shape(format!(
            "conv1d_causal: input has {c_in} channels but kernel expects {w_cin}"
        )));
    }
    if b.dims1()? != c_out {
        return Err(Error::Shape(format!(
            "conv1d_causal: kernel has {c_out} output channels but bias has {}",
            b.numel()
        )));
    }
    let _ = n;
    Ok((n, c_in, t, c_out, k))
}

/// `y[n,co,t] = b[co] + sum_{cin,j} w[co,cin,j] * x[n,cin,t-j*dilation]`
/// (taps falling before t=0 read the implicit zero padding).
pub fn conv1d_causal_forward<E: Elem>(
    x: &Tensor<E>,
    w: &Tensor<E>,
    b: &Tensor<E>,
    dilation: usize,
) -> Result<Tensor<E>> {
    let (n, c_in, t, c_out, k) = check_args(x, w, b, dilation)?;
    let mut y = Tensor::zeros(&[n, c_out, t])?;
    let wd = w.data();
    for ni in 0..n {
        for co in 0..c_out {
            let y_row = y.row3_mut(ni, co);
            y_row.fill(b.data()[co]);
            for j in 0..k {
                let off = j * dilation;
                if off >= t {
                    break;
                }
                let len = t - off;
                // Four input channels per sweep keeps the output row in
                // registers; taps are contiguous AXPY updates.
                let mut cin = 0;
                while cin + 4 <= c_in {
                    let w0 = wd[(co * c_in + cin) * k + j];
                    let w1 = wd[(co * c_in + cin + 1) * k + j];
                    let w2 = wd[(co * c_in + cin + 2) * k + j];
                    let w3 = wd[(co * c_in + cin + 3) * k + j];
                    let x0 = &x.row3(ni, cin)[..len];
                    let x1 = &x.row3(ni, cin + 1)[..len];
                    let x2 = &x.row3(ni, cin + 2)[..len];
                    let x3 = &x.row3(ni, cin + 3)[..len];
                    let dst = &mut y_row[off..off + len];
                    for i in 0..len {
                        dst[i] = dst[i] + w0 * x0[i] + w1 * x1[i] + w2 * x2[i] + w3 * x3[i];
                    }
                    cin += 4;
                }
                while cin < c_in {
                    let wv = wd[(co * c_in + cin) * k + j];
                    arith::axpy(&mut y_row[off..], wv, &x.row3(ni, cin)[..len]);
                    cin += 1;
                }
            }
        }
    }
    Ok(y)
}

/// Gradients `(gx, gw, gb)` of the forward contract for upstream `grad`.
pub fn conv1d_causal_vjp<E: Elem>(
    x: &Tensor<E>,
    w: &Tensor<E>,
    b: &Tensor<E>,
    dilation: usize,
    grad: &Tensor<E>,
) -> Result<(Tensor<E>, Tensor<E>, Tensor<E>)> {
    let (n, c_in, t, c_out, k) = check_args(x, w, b, dilation)?;
    if grad.shape() != [n, c_out, t] {
        return Err(Error::Shape(format!(
            "conv1d_causal vjp: upstream gradient shape {:?} != output shape {:?}",
            grad.shape(),
            [n, c_out, t]
        )));
    }
    let wd = w.data();

    // gx[n,cin,s] = sum_{co,j} w[co,cin,j] * grad[n,co,s+j*d]
    let mut gx = Tensor::zeros(&[n, c_in, t])?;
    for ni in 0..n {
        for cin in 0..c_in {
            let gx_row = gx.row3_mut(ni, cin);
            for j in 0..k {
                let off = j * dilation;
                if off >= t {
                    break;
                }
                let len = t - off;
                let mut co = 0;
                while co + 4 <= c_out {
                    let w0 = wd[(co * c_in + cin) * k + j];
                    let w1 = wd[((co + 1) * c_in + cin) * k + j];
                    let w2 = wd[((co + 2) * c_in + cin) * k + j];
                    let w3 = wd[((co + 3) * c_in + cin) * k + j];
                    let g0 = &grad.row3(ni, co)[off..off + len];
                    let g1 = &grad.row3(ni, co + 1)[off..off + len];
                    let g2 = &grad.row3(ni, co + 2)[off..off + len];
                    let g3 = &grad.row3(ni, co + 3)[off..off + len];
                    let dst = &mut gx_row[..len];
                    for i in 0..len {
                        dst[i] = dst[i] + w0 * g0[i] + w1 * g1[i] + w2 * g2[i] + w3 * g3[i];
                    }
                    co += 4;
                }
                while co < c_out {
                    let wv = wd[(co * c_in + cin) * k + j];
                    arith::axpy(&mut gx_row[..len], wv, &grad.row3(ni, co)[off..off + len]);
                    co += 1;
                }
            }
        }
    }

    // gw[co,cin,j] = sum_n dot(grad[n,co,off..], x[n,cin,..t-off])
    let mut gw = Tensor::zeros(&[c_out, c_in, k])?;
    {
        let gwd = gw.data_mut();
        for co in 0..c_out {
            for cin in 0..c_in {
                for j in 0..k {
                    let off = j * dilation;
                    if off >= t {
                        break;
                    }
                    let len = t - off;
                    let mut acc = E::zero();
                    for ni in 0..n {
                        acc = acc
                            + arith::dot(&grad.row3(ni, co)[off..], &x.row3(ni, cin)[..len]);
                    }
                    gwd[(co * c_in + cin) * k + j] = acc;
                }
            }
        }
    }

    // gb[co] = sum_{n,t} grad[n,co,t]
    let mut gb = Tensor::zeros(&[c_out])?;
    for co in 0..c_out {
        let mut acc = E::zero();
        for ni in 0..n {
            acc = acc + arith::sum(grad.row3(ni, co));
        }
        gb.data_mut()[co] = acc;
    }

    Ok((gx, gw, gb))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t3(shape: [usize; 3], data: Vec<f64>) -> Tensor<f64> {
        Tensor::from_vec(&shape, data).unwrap()
    }

    #[test]
    fn identity_kernel_passes_input_through() {
        let x = t3([1, 1, 4], vec![1.0, 2.0, 3.0, 4.0]);
        let w = t3([1, 1, 1], vec![1.0]);
        let b = Tensor::vector(&[0.0]).unwrap();
        let y = conv1d_causal_forward(&x, &w, &b, 1).unwrap();
        assert!(y.bit_eq(&x));
    }

    #[test]
    fn dilated_two_tap_sums_current_and_lagged() {
        // y[t] = x[t] + x[t-2]
        let x = t3([1, 1, 4], vec![1.0, 2.0, 3.0, 4.0]);
        let w = t3([1, 1, 2], vec![1.0, 1.0]);
        let b = Tensor::vector(&[0.0]).unwrap();
        let y = conv1d_causal_forward(&x, &w, &b, 2).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0, 4.0, 6.0]);
    }

    #[test]
    fn output_length_equals_input_length_at_eeg_scale() {
        // 22-channel, 2560-sample records: output keeps the input length.
        let x = Tensor::<f32>::full(&[8, 22, 2560], 0.5).unwrap();
        let w = Tensor::<f32>::full(&[32, 22, 3], 0.01).unwrap();
        let b = Tensor::<f32>::zeros(&[32]).unwrap();
        let y = conv1d_causal_forward(&x, &w, &b, 4).unwrap();
        assert_eq!(y.shape(), &[8, 32, 2560]);
        assert!(y.is_finite());
    }

    #[test]
    fn channel_mismatch_is_shape_error() {
        let x = Tensor::<f32>::zeros(&[1, 3, 8]).unwrap();
        let w = Tensor::<f32>::zeros(&[4, 2, 3]).unwrap();
        let b = Tensor::<f32>::zeros(&[4]).unwrap();
        assert!(matches!(
            conv1d_causal_forward(&x, &w, &b, 1).unwrap_err(),
            Error::Shape(_)
        ));
    }

    #[test]
    fn zero_dilation_is_invalid_argument() {
        let x = Tensor::<f32>::zeros(&[1, 1, 8]).unwrap();
        let w = Tensor::<f32>::zeros(&[1, 1, 3]).unwrap();
        let b = Tensor::<f32>::zeros(&[1]).unwrap();
        assert!(matches!(
            conv1d_causal_forward(&x, &w, &b, 0).unwrap_err(),
            Error::InvalidArgument(_)
        ));
    }

    #[test]
    fn forward_matches_direct_sum_oracle() {
        // Independent oracle: explicit left-padded triple sum.
        let (n, c_in, c_out, t, k, d) = (2usize, 3usize, 4usize, 11usize, 3usize, 2usize);
        let mut state = 1234u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 33) as f64 / (1u64 << 31) as f64) - 0.5
        };
        let x = t3([n, c_in, t], (0..n * c_in * t).map(|_| next()).collect());
        let w = t3([c_out, c_in, k], (0..c_out * c_in * k).map(|_| next()).collect());
        let b = Tensor::vector(&(0..c_out).map(|_| next()).collect::<Vec<_>>()).unwrap();
        let y = conv1d_causal_forward(&x, &w, &b, d).unwrap();

        let pad = (k - 1) * d;
        for ni in 0..n {
            for co in 0..c_out {
                for ti in 0..t {
                    let mut expect = b.data()[co];
                    for cin in 0..c_in {
                        for j in 0..k {
                            // x-hat index in the padded signal
                            let ph = ti + pad - j * d;
                            if ph >= pad {
                                expect += w.at3(co, cin, j) * x.at3(ni, cin, ph - pad);
                            }
                        }
                    }
                    let got = y.at3(ni, co, ti);
                    assert!(
                        (got - expect).abs() <= 1e-12 * expect.abs().max(1.0),
                        "mismatch at ({ni},{co},{ti}): {got} vs {expect}"
                    );
                }
            }
        }
    }
}
