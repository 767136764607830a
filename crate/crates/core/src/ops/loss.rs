//! Classification losses with exact gradients computed at forward time.

use crate::error::{Error, Result};
use crate::tensor::{lit, Elem, Tensor};

/// Mean (optionally class-weighted) softmax cross entropy over the batch.
///
/// Returns the scalar loss and `dlogits`, the exact gradient of that mean
/// with respect to the logits. Rows are stabilized by subtracting their max
/// before exponentiation.
pub fn softmax_cross_entropy<E: Elem>(
    logits: &Tensor<E>,
    labels: &[usize],
    class_weights: Option<&[E]>,
) -> Result<(E, Tensor<E>)> {
    let (n, k) = logits.dims2()?;
    if labels.len() != n {
        return Err(Error::Shape(format!(
            "softmax_cross_entropy: {n} logit rows but {} labels",
            labels.len()
        )));
    }
    if let Some(w) = class_weights {
        if w.len() != k {
            return Err(Error::Shape(format!(
                "softmax_cross_entropy: {k} classes but {} class weights",
                w.len()
            )));
        }
    }
    for (i, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(Error::InvalidArgument(format!(
                "softmax_cross_entropy: label {y} at row {i} is outside [0, {k})"
            )));
        }
    }
    let inv_n = lit::<E>(n as f64).recip();
    let mut dlogits = Tensor::zeros(&[n, k])?;
    let mut loss = E::zero();
    for (ni, &y) in labels.iter().enumerate() {
        let row = &logits.data()[ni * k..(ni + 1) * k];
        let w = class_weights.map_or(E::one(), |cw| cw[y]);
        let mut max = row[0];
        for &v in &row[1..] {
            if v > max {
                max = v;
            }
        }
        let mut denom = E::zero();
        for &v in row {
            denom = denom + (v - max).exp();
        }
        let lse = denom.ln();
        loss = loss + w * (lse - (row[y] - max));
        let d_row = &mut dlogits.data_mut()[ni * k..(ni + 1) * k];
        let scale = w * inv_n;
        for (ki, d) in d_row.iter_mut().enumerate() {
            let p = (row[ki] - max).exp() / denom;
            let onehot = if ki == y { E::one() } else { E::zero() };
            *d = scale * (p - onehot);
        }
    }
    Ok((loss * inv_n, dlogits))
}

/// Mean stabilized binary cross entropy over all `N*K` elements:
/// `max(z,0) - z*t + ln(1 + exp(-|z|))`.
pub fn sigmoid_bce<E: Elem>(logits: &Tensor<E>, targets: &Tensor<E>) -> Result<(E, Tensor<E>)> {
    let (n, k) = logits.dims2()?;
    if targets.shape() != logits.shape() {
        return Err(Error::Shape(format!(
            "sigmoid_bce: logits shape {:?} != targets shape {:?}",
            logits.shape(),
            targets.shape()
        )));
    }
    for (i, &t) in targets.data().iter().enumerate() {
        if t != E::zero() && t != E::one() {
            return Err(Error::InvalidArgument(format!(
                "sigmoid_bce: target at flat index {i} is {t}, expected 0 or 1"
            )));
        }
    }
    let inv_m = lit::<E>((n * k) as f64).recip();
    let mut dlogits = Tensor::zeros(&[n, k])?;
    let mut loss = E::zero();
    for (i, (&z, &t)) in logits.data().iter().zip(targets.data()).enumerate() {
        let pos = if z > E::zero() { z } else { E::zero() };
        loss = loss + pos - z * t + (E::one() + (-z.abs()).exp()).ln();
        dlogits.data_mut()[i] = (sigmoid(z) - t) * inv_m;
    }
    Ok((loss * inv_m, dlogits))
}

/// Numerically stable logistic function.
pub fn sigmoid<E: Elem>(z: E) -> E {
    if z >= E::zero() {
        (E::one() + (-z).exp()).recip()
    } else {
        let e = z.exp();
        e / (E::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_cost_ln_k() {
        let logits = Tensor::<f64>::full(&[4, 5], 0.3).unwrap();
        let (loss, _) = softmax_cross_entropy(&logits, &[0, 1, 2, 3], None).unwrap();
        assert!((loss - 5.0f64.ln()).abs() < 1e-12);
        assert!((loss - 1.60944).abs() < 1e-5);
    }

    #[test]
    fn two_class_closed_form() {
        let logits = Tensor::<f64>::from_vec(&[1, 2], vec![2.0, 0.0]).unwrap();
        let (loss, _) = softmax_cross_entropy(&logits, &[0], None).unwrap();
        let expect = (1.0 + (-2.0f64).exp()).ln();
        assert!((loss - expect).abs() < 1e-12);
        assert!((loss - 0.12693).abs() < 1e-5);
    }

    #[test]
    fn unweighted_gradient_rows_sum_to_zero() {
        let logits =
            Tensor::<f64>::from_vec(&[2, 3], vec![0.1, -2.0, 1.5, 3.0, 3.0, -1.0]).unwrap();
        let (_, d) = softmax_cross_entropy(&logits, &[2, 0], None).unwrap();
        for ni in 0..2 {
            let s: f64 = d.data()[ni * 3..(ni + 1) * 3].iter().sum();
            assert!(s.abs() < 1e-15, "row {ni} sums to {s}");
        }
    }

    #[test]
    fn loss_is_nonnegative_and_ln_k_exactly_for_constant_rows() {
        let mut state = 7u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 33) as f64 / (1u64 << 31) as f64) * 4.0 - 2.0
        };
        for trial in 0..50 {
            let (n, k) = (3usize, 4usize);
            let logits = Tensor::<f64>::from_vec(&[n, k], (0..n * k).map(|_| next()).collect())
                .unwrap();
            let labels: Vec<usize> = (0..n).map(|i| (i + trial) % k).collect();
            let (loss, _) = softmax_cross_entropy(&logits, &labels, None).unwrap();
            assert!(loss >= 0.0, "trial {trial}: loss {loss}");
        }
        // Row-constant logits (any constant per row) cost exactly ln K.
        let logits =
            Tensor::<f64>::from_vec(&[2, 3], vec![5.0, 5.0, 5.0, -1.3, -1.3, -1.3]).unwrap();
        let (loss, _) = softmax_cross_entropy(&logits, &[2, 0], None).unwrap();
        assert!((loss - 3.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_label_is_invalid_argument() {
        let logits = Tensor::<f64>::zeros(&[1, 3]).unwrap();
        assert!(matches!(
            softmax_cross_entropy(&logits, &[3], None).unwrap_err(),
            Error::InvalidArgument(_)
        ));
    }

    #[test]
    fn bce_at_zero_logit_is_ln_two() {
        let z = Tensor::<f64>::zeros(&[1, 1]).unwrap();
        let t = Tensor::<f64>::full(&[1, 1], 1.0).unwrap();
        let (loss, _) = sigmoid_bce(&z, &t).unwrap();
        assert!((loss - 2.0f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn bce_large_logit_does_not_overflow() {
        let z = Tensor::<f64>::full(&[1, 1], 40.0).unwrap();
        let t = Tensor::<f64>::full(&[1, 1], 1.0).unwrap();
        let (loss, d) = sigmoid_bce(&z, &t).unwrap();
        assert!(loss.is_finite());
        assert!(loss < 1e-15);
        assert!(d.is_finite());
    }

    #[test]
    fn bce_rejects_non_binary_targets() {
        let z = Tensor::<f64>::zeros(&[1, 1]).unwrap();
        let t = Tensor::<f64>::full(&[1, 1], 0.5).unwrap();
        assert!(matches!(sigmoid_bce(&z, &t).unwrap_err(), Error::InvalidArgument(_)));
    }
}
