//! Fixed-order reduction helpers shared by the kernels.
//!
//! Reductions accumulate in 8 independent lanes and fold the lanes in a fixed
//! order at the end. The element-to-lane assignment depends only on slice
//! length, so every reduction has one well-defined result regardless of how
//! callers schedule work, and the lane structure lets the compiler vectorize
//! strict-IEEE loops it could not reassociate on its own.

use crate::tensor::Elem;

const LANES: usize = 8;

/// Sum of a slice, 8-lane blocked, fixed order.
#[inline]
pub fn sum<E: Elem>(a: &[E]) -> E {
    let mut acc = [E::zero(); LANES];
    let mut chunks = a.chunks_exact(LANES);
    for ch in &mut chunks {
        for l in 0..LANES {
            acc[l] = acc[l] + ch[l];
        }
    }
    let mut tail = E::zero();
    for &v in chunks.remainder() {
        tail = tail + v;
    }
    fold(acc) + tail
}

/// Dot product, 8-lane blocked, fixed order.
#[inline]
pub fn dot<E: Elem>(a: &[E], b: &[E]) -> E {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [E::zero(); LANES];
    let mut ai = a.chunks_exact(LANES);
    let mut bi = b.chunks_exact(LANES);
    for (ca, cb) in (&mut ai).zip(&mut bi) {
        for l in 0..LANES {
            acc[l] = acc[l] + ca[l] * cb[l];
        }
    }
    let mut tail = E::zero();
    for (&x, &y) in ai.remainder().iter().zip(bi.remainder()) {
        tail = tail + x * y;
    }
    fold(acc) + tail
}

/// Sum of squares, 8-lane blocked, fixed order.
#[inline]
pub fn sum_sq<E: Elem>(a: &[E]) -> E {
    let mut acc = [E::zero(); LANES];
    let mut chunks = a.chunks_exact(LANES);
    for ch in &mut chunks {
        for l in 0..LANES {
            acc[l] = acc[l] + ch[l] * ch[l];
        }
    }
    let mut tail = E::zero();
    for &v in chunks.remainder() {
        tail = tail + v * v;
    }
    fold(acc) + tail
}

/// `y += a * x` over equal-length slices.
#[inline]
pub fn axpy<E: Elem>(y: &mut [E], a: E, x: &[E]) {
    let n = y.len().min(x.len());
    let (y, x) = (&mut y[..n], &x[..n]);
    for t in 0..n {
        y[t] = y[t] + a * x[t];
    }
}

#[inline]
fn fold<E: Elem>(acc: [E; LANES]) -> E {
    let mut s = acc[0];
    for &l in &acc[1..] {
        s = s + l;
    }
    s
}
