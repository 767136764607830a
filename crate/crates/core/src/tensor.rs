//! Dense rank-1/2/3 tensors over `f32` or `f64`.
//!
//! Axis semantics are positional: rank-3 is `(batch N, channels C, time T)`,
//! rank-2 is `(N, features)`, rank-1 is a flat vector. Storage is contiguous
//! row-major, so the time axis is innermost and kernel inner loops run over
//! contiguous slices.

use std::fmt;

use crate::error::{Error, Result};

/// Scalar element type of tensors and parameters.
///
/// The production path instantiates everything at `f32`; verification suites
/// (finite-difference gradient checks) instantiate at `f64`.
pub trait Elem:
    num_traits::Float + fmt::Debug + fmt::Display + Default + Send + Sync + 'static
{
    const WIDTH: u8;
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn from_f32(v: f32) -> Self;
    fn as_f32(self) -> f32;
}

impl Elem for f32 {
    const WIDTH: u8 = 4;
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn from_f32(v: f32) -> Self {
        v
    }
    #[inline]
    fn as_f32(self) -> f32 {
        self
    }
}

impl Elem for f64 {
    const WIDTH: u8 = 8;
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
    #[inline]
    fn from_f32(v: f32) -> Self {
        v as f64
    }
    #[inline]
    fn as_f32(self) -> f32 {
        self as f32
    }
}

/// Dense numeric array of rank 1 to 3, contiguous row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<E: Elem> {
    shape: Vec<usize>,
    data: Vec<E>,
}

impl<E: Elem> Tensor<E> {
    /// Builds a tensor, validating rank, extents and element count.
    pub fn from_vec(shape: &[usize], data: Vec<E>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 3 {
            return Err(Error::Shape(format!(
                "rank must be 1..=3, got {} ({shape:?})",
                shape.len()
            )));
        }
        if shape.contains(&0) {
            return Err(Error::Shape(format!("all extents must be >= 1, got {shape:?}")));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} implies {numel} elements, buffer holds {}",
                data.len()
            )));
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        Tensor::from_vec(shape, vec![E::zero(); numel])
    }

    pub fn full(shape: &[usize], value: E) -> Result<Self> {
        let numel: usize = shape.iter().product();
        Tensor::from_vec(shape, vec![value; numel])
    }

    /// Rank-1 tensor from a slice.
    pub fn vector(values: &[E]) -> Result<Self> {
        Tensor::from_vec(&[values.len()], values.to_vec())
    }

    pub fn scalar(value: E) -> Self {
        Tensor { shape: vec![1], data: vec![value] }
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    #[inline]
    pub fn numel(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn data(&self) -> &[E] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [E] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<E> {
        self.data
    }

    /// `(N, C, T)` extents; errors unless rank 3.
    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [n, c, t] => Ok((n, c, t)),
            _ => Err(Error::Shape(format!("expected rank-3 tensor, got {:?}", self.shape))),
        }
    }

    /// `(N, F)` extents; errors unless rank 2.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [n, f] => Ok((n, f)),
            _ => Err(Error::Shape(format!("expected rank-2 tensor, got {:?}", self.shape))),
        }
    }

    /// Extent of a rank-1 tensor.
    pub fn dims1(&self) -> Result<usize> {
        match self.shape[..] {
            [n] => Ok(n),
            _ => Err(Error::Shape(format!("expected rank-1 tensor, got {:?}", self.shape))),
        }
    }

    #[inline]
    pub fn at3(&self, n: usize, c: usize, t: usize) -> E {
        let (_, cc, tt) = (self.shape[0], self.shape[1], self.shape[2]);
        self.data[(n * cc + c) * tt + t]
    }

    #[inline]
    pub fn at2(&self, n: usize, f: usize) -> E {
        self.data[n * self.shape[1] + f]
    }

    /// Contiguous time row `(n, c, ..)` of a rank-3 tensor.
    #[inline]
    pub fn row3(&self, n: usize, c: usize) -> &[E] {
        let (cc, tt) = (self.shape[1], self.shape[2]);
        let start = (n * cc + c) * tt;
        &self.data[start..start + tt]
    }

    #[inline]
    pub fn row3_mut(&mut self, n: usize, c: usize) -> &mut [E] {
        let (cc, tt) = (self.shape[1], self.shape[2]);
        let start = (n * cc + c) * tt;
        &mut self.data[start..start + tt]
    }

    /// True when every element is finite (no NaN/Inf).
    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Converts element width; exact when widening, rounds when narrowing.
    pub fn cast<F: Elem>(&self) -> Tensor<F> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| F::from_f64(v.as_f64())).collect(),
        }
    }

    /// Bitwise equality of shape and elements (NaN-free data assumed).
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.shape == other.shape
            && self.data.len() == other.data.len()
            && self
                .data
                .iter()
                .zip(other.data.iter())
                .all(|(a, b)| a.as_f64().to_bits() == b.as_f64().to_bits())
    }
}

/// Convenience for numeric literals inside generic kernels.
#[inline]
pub fn lit<E: Elem>(v: f64) -> E {
    E::from_f64(v)
}
