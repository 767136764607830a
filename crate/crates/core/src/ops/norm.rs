//! Batch normalization over `(N, T)` per channel.

use crate::error::{Error, Result};
use crate::ops::arith;
use crate::tensor::{lit, Elem, Tensor};

/// Epsilon added to the variance inside the square root.
pub const BN_EPS: f64 = 1e-5;

/// Momentum of the running-statistics update in Train mode.
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel batch statistics captured by a Train-mode forward.
#[derive(Debug, Clone)]
pub struct BnBatchStats<E: Elem> {
    /// Mean over all `(n, t)` positions, per channel.
    pub mean: Vec<E>,
    /// Biased (population) variance over all `(n, t)` positions, per channel.
    pub var: Vec<E>,
}

fn check_affine<E: Elem>(x: &Tensor<E>, gamma: &Tensor<E>, beta: &Tensor<E>) -> Result<(usize, usize, usize)> {
    let (n, c, t) = x.dims3()?;
    if gamma.dims1()? != c || beta.dims1()? != c {
        return Err(Error::Shape(format!(
            "batchnorm1d: input has {c} channels, gamma has {} and beta has {}",
            gamma.numel(),
            beta.numel()
        )));
    }
    Ok((n, c, t))
}

/// Train-mode forward: normalizes with batch statistics and returns them so
/// the caller can fold them into its running estimates.
pub fn batchnorm1d_train_forward<E: Elem>(
    x: &Tensor<E>,
    gamma: &Tensor<E>,
    beta: &Tensor<E>,
) -> Result<(Tensor<E>, BnBatchStats<E>)> {
    let (n, c, t) = check_affine(x, gamma, beta)?;
    let m = lit::<E>((n * t) as f64);
    let mut mean = vec![E::zero(); c];
    let mut var = vec![E::zero(); c];
    for ci in 0..c {
        let mut s = E::zero();
        for ni in 0..n {
            s = s + arith::sum(x.row3(ni, ci));
        }
        let mu = s / m;
        let mut sq = E::zero();
        for ni in 0..n {
            let row = x.row3(ni, ci);
            let mut acc = E::zero();
            for &v in row {
                let d = v - mu;
                acc = acc + d * d;
            }
            sq = sq + acc;
        }
        mean[ci] = mu;
        var[ci] = sq / m;
    }
    let y = normalize(x, gamma, beta, &mean, &var)?;
    Ok((y, BnBatchStats { mean, var }))
}

/// Eval-mode forward: normalizes with the provided running statistics.
pub fn batchnorm1d_eval_forward<E: Elem>(
    x: &Tensor<E>,
    gamma: &Tensor<E>,
    beta: &Tensor<E>,
    running_mean: &[E],
    running_var: &[E],
) -> Result<Tensor<E>> {
    let (_, c, _) = check_affine(x, gamma, beta)?;
    if running_mean.len() != c || running_var.len() != c {
        return Err(Error::Shape(format!(
            "batchnorm1d: running stats cover {} channels, input has {c}",
            running_mean.len()
        )));
    }
    normalize(x, gamma, beta, running_mean, running_var)
}

fn normalize<E: Elem>(
    x: &Tensor<E>,
    gamma: &Tensor<E>,
    beta: &Tensor<E>,
    mean: &[E],
    var: &[E],
) -> Result<Tensor<E>> {
    let (n, c, t) = x.dims3()?;
    let eps = lit::<E>(BN_EPS);
    let mut y = Tensor::zeros(&[n, c, t])?;
    for ci in 0..c {
        let inv_std = (var[ci] + eps).sqrt().recip();
        let scale = gamma.data()[ci] * inv_std;
        let shift = beta.data()[ci] - mean[ci] * scale;
        for ni in 0..n {
            let src = x.row3(ni, ci);
            let dst = y.row3_mut(ni, ci);
            for i in 0..t {
                dst[i] = src[i] * scale + shift;
            }
        }
    }
    Ok(y)
}

/// Train-mode gradients for `(x, gamma, beta)`; differentiates through the
/// batch statistics.
pub fn batchnorm1d_train_vjp<E: Elem>(
    x: &Tensor<E>,
    gamma: &Tensor<E>,
    stats: &BnBatchStats<E>,
    grad: &Tensor<E>,
) -> Result<(Tensor<E>, Tensor<E>, Tensor<E>)> {
    let (n, c, t) = x.dims3()?;
    if grad.shape() != x.shape() {
        return Err(Error::Shape("batchnorm1d vjp: gradient shape differs from input".into()));
    }
    let eps = lit::<E>(BN_EPS);
    let m = lit::<E>((n * t) as f64);
    let mut gx = Tensor::zeros(&[n, c, t])?;
    let mut ggamma = Tensor::zeros(&[c])?;
    let mut gbeta = Tensor::zeros(&[c])?;
    for ci in 0..c {
        let mu = stats.mean[ci];
        let inv_std = (stats.var[ci] + eps).sqrt().recip();
        let mut sum_g = E::zero();
        let mut sum_g_xhat = E::zero();
        for ni in 0..n {
            let g_row = grad.row3(ni, ci);
            let x_row = x.row3(ni, ci);
            sum_g = sum_g + arith::sum(g_row);
            let mut acc = E::zero();
            for i in 0..t {
                acc = acc + g_row[i] * ((x_row[i] - mu) * inv_std);
            }
            sum_g_xhat = sum_g_xhat + acc;
        }
        ggamma.data_mut()[ci] = sum_g_xhat;
        gbeta.data_mut()[ci] = sum_g;
        let scale = gamma.data()[ci] * inv_std;
        let mean_g = sum_g / m;
        let mean_g_xhat = sum_g_xhat / m;
        for ni in 0..n {
            let g_row = grad.row3(ni, ci);
            let x_row = x.row3(ni, ci);
            let dst = gx.row3_mut(ni, ci);
            for i in 0..t {
                let xhat = (x_row[i] - mu) * inv_std;
                dst[i] = scale * (g_row[i] - mean_g - xhat * mean_g_xhat);
            }
        }
    }
    Ok((gx, ggamma, gbeta))
}

/// Eval-mode gradients; running statistics are constants.
pub fn batchnorm1d_eval_vjp<E: Elem>(
    x: &Tensor<E>,
    gamma: &Tensor<E>,
    running_mean: &[E],
    running_var: &[E],
    grad: &Tensor<E>,
) -> Result<(Tensor<E>, Tensor<E>, Tensor<E>)> {
    let (n, c, t) = x.dims3()?;
    if grad.shape() != x.shape() {
        return Err(Error::Shape("batchnorm1d vjp: gradient shape differs from input".into()));
    }
    let eps = lit::<E>(BN_EPS);
    let mut gx = Tensor::zeros(&[n, c, t])?;
    let mut ggamma = Tensor::zeros(&[c])?;
    let mut gbeta = Tensor::zeros(&[c])?;
    for ci in 0..c {
        let mu = running_mean[ci];
        let inv_std = (running_var[ci] + eps).sqrt().recip();
        let scale = gamma.data()[ci] * inv_std;
        let mut sum_g = E::zero();
        let mut sum_g_xhat = E::zero();
        for ni in 0..n {
            let g_row = grad.row3(ni, ci);
            let x_row = x.row3(ni, ci);
            let dst = gx.row3_mut(ni, ci);
            sum_g = sum_g + arith::sum(g_row);
            let mut acc = E::zero();
            for i in 0..t {
                acc = acc + g_row[i] * ((x_row[i] - mu) * inv_std);
                dst[i] = g_row[i] * scale;
            }
            sum_g_xhat = sum_g_xhat + acc;
        }
        ggamma.data_mut()[ci] = sum_g_xhat;
        gbeta.data_mut()[ci] = sum_g;
    }
    Ok((gx, ggamma, gbeta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_input_maps_to_zero_in_train_mode() {
        let x = Tensor::<f64>::full(&[3, 2, 5], 4.25).unwrap();
        let gamma = Tensor::vector(&[1.0, 1.0]).unwrap();
        let beta = Tensor::vector(&[0.0, 0.0]).unwrap();
        let (y, stats) = batchnorm1d_train_forward(&x, &gamma, &beta).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        assert_eq!(stats.mean, vec![4.25, 4.25]);
        assert_eq!(stats.var, vec![0.0, 0.0]);
    }

    #[test]
    fn zero_gamma_pins_output_to_beta() {
        let x = Tensor::<f64>::from_vec(&[2, 1, 2], vec![1.0, -7.0, 3.0, 9.0]).unwrap();
        let gamma = Tensor::vector(&[0.0]).unwrap();
        let beta = Tensor::vector(&[5.0]).unwrap();
        let (y, _) = batchnorm1d_train_forward(&x, &gamma, &beta).unwrap();
        assert!(y.data().iter().all(|&v| v == 5.0));
    }

    #[test]
    fn two_sample_train_normalization_matches_hand_formula() {
        // x = [1, 3] as (N=2, C=1, T=1): mean 2, biased var 1.
        let x = Tensor::<f64>::from_vec(&[2, 1, 1], vec![1.0, 3.0]).unwrap();
        let gamma = Tensor::vector(&[1.0]).unwrap();
        let beta = Tensor::vector(&[0.0]).unwrap();
        let (y, stats) = batchnorm1d_train_forward(&x, &gamma, &beta).unwrap();
        let expect = 1.0 / (1.0 + BN_EPS).sqrt();
        assert!((y.data()[0] + expect).abs() < 1e-15);
        assert!((y.data()[1] - expect).abs() < 1e-15);
        assert_eq!(stats.var, vec![1.0]);
    }

    #[test]
    fn eval_mode_uses_running_statistics_only() {
        let x = Tensor::<f64>::from_vec(&[1, 1, 3], vec![10.0, 20.0, 30.0]).unwrap();
        let gamma = Tensor::vector(&[2.0]).unwrap();
        let beta = Tensor::vector(&[1.0]).unwrap();
        let y = batchnorm1d_eval_forward(&x, &gamma, &beta, &[20.0], &[100.0]).unwrap();
        let inv = 1.0 / (100.0 + BN_EPS).sqrt();
        for (i, &v) in y.data().iter().enumerate() {
            let expect = 2.0 * ((10.0 + 10.0 * i as f64) - 20.0) * inv + 1.0;
            assert!((v - expect).abs() < 1e-12);
        }
    }
}
