//! Dense value-semantic tensors.
//!
//! Feature maps are channels-first `[batch, C, h, w]`, projection weights are
//! `[out, in]`, biases are `[n]`. Elements live in a single row-major `Vec`;
//! cloning copies. Two precisions are supported through the [`Real`] trait:
//! `f64` for oracle and gradient verification, `f32` for training.

pub mod ops;
pub mod tape;

use crate::error::{Error, Result};
use std::fmt::{Debug, Display};

/// Scalar element: `f32` (narrow, training default) or `f64` (wide, verification).
pub trait Real:
    num_traits::Float + num_traits::NumAssign + Copy + Send + Sync + Debug + Display + 'static
{
    /// Dtype code used by the checkpoint format (1 = f32, 2 = f64).
    const DTYPE_CODE: u8;

    fn from_f64(x: f64) -> Self;
    fn wide(self) -> f64;

    /// Error function, evaluated in double precision.
    fn erf(self) -> Self {
        Self::from_f64(libm::erf(self.wide()))
    }
}

impl Real for f32 {
    const DTYPE_CODE: u8 = 1;
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn wide(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    const DTYPE_CODE: u8 = 2;
    fn from_f64(x: f64) -> Self {
        x
    }
    fn wide(self) -> f64 {
        self
    }
}

/// Dense n-dimensional array with shape metadata.
#[derive(Clone, PartialEq)]
pub struct Tensor<T: Real> {
    dims: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
}

impl<T: Real> Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Tensor{:?}", self.dims)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl<T: Real> Tensor<T> {
    pub fn from_vec(dims: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if dims.is_empty() || dims.iter().any(|&d| d == 0) {
            return Err(Error::invalid("tensor", format!("dims must be positive, got {dims:?}")));
        }
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("dims {:?} imply {} elements, got {}", dims, n, data.len()),
            ));
        }
        Ok(Tensor { dims, data, requires_grad: false })
    }

    pub fn zeros(dims: &[usize]) -> Self {
        let n: usize = dims.iter().product();
        Tensor { dims: dims.to_vec(), data: vec![T::zero(); n], requires_grad: false }
    }

    pub fn ones(dims: &[usize]) -> Self {
        Tensor::full(dims, T::one())
    }

    pub fn full(dims: &[usize], v: T) -> Self {
        let n: usize = dims.iter().product();
        Tensor { dims: dims.to_vec(), data: vec![v; n], requires_grad: false }
    }

    pub fn scalar(v: T) -> Self {
        Tensor { dims: vec![1], data: vec![v], requires_grad: false }
    }

    /// 2-D identity matrix.
    pub fn eye(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        t
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, rg: bool) {
        self.requires_grad = rg;
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Value of a rank-1-element tensor.
    pub fn item(&self) -> T {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    /// Dimensions of a 4-axis feature map as (b, c, h, w).
    pub fn dims4(&self, op: &'static str) -> Result<(usize, usize, usize, usize)> {
        if self.rank() != 4 {
            return Err(Error::shape(op, format!("expected 4-axis tensor, got {:?}", self.dims)));
        }
        Ok((self.dims[0], self.dims[1], self.dims[2], self.dims[3]))
    }

    pub fn is_all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Reinterpret the element buffer under new dims (row-major order kept).
    pub fn reshape(&self, dims: &[usize]) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != self.data.len() || dims.iter().any(|&d| d == 0) {
            return Err(Error::shape(
                "reshape",
                format!("cannot view {:?} as {:?}", self.dims, dims),
            ));
        }
        Ok(Tensor { dims: dims.to_vec(), data: self.data.clone(), requires_grad: self.requires_grad })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
            requires_grad: false,
        }
    }

    /// Fill from a deterministic stream: uniform in [lo, hi).
    pub fn fill_uniform(&mut self, rng: &mut crate::rng::Stream, lo: f64, hi: f64) {
        for v in &mut self.data {
            *v = T::from_f64(rng.uniform_in(lo, hi));
        }
    }

    /// Fill with truncated normal (std, clipped at two sigma).
    pub fn fill_trunc_normal(&mut self, rng: &mut crate::rng::Stream, std: f64) {
        for v in &mut self.data {
            *v = T::from_f64(rng.trunc_normal(std));
        }
    }

    /// Convert element type (f32 <-> f64).
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.wide())).collect(),
            requires_grad: self.requires_grad,
        }
    }

    /// Max absolute difference against another tensor of the same shape.
    pub fn max_abs_diff(&self, other: &Tensor<T>) -> f64 {
        assert_eq!(self.dims, other.dims, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.wide() - b.wide()).abs())
            .fold(0.0, f64::max)
    }
}

/// Flat offset of `[b, c, i, j]` in a `[bs, cs, hs, ws]` tensor.
#[inline(always)]
pub fn idx4(c_len: usize, h_len: usize, w_len: usize, b: usize, c: usize, i: usize, j: usize) -> usize {
    ((b * c_len + c) * h_len + i) * w_len + j
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_validates_shape() {
        assert!(Tensor::<f64>::from_vec(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::<f64>::from_vec(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f64>::from_vec(vec![2, 0], vec![]).is_err());
        assert!(Tensor::<f64>::from_vec(vec![], vec![]).is_err());
    }

    #[test]
    fn reshape_keeps_order() {
        let t = Tensor::from_vec(vec![2, 3], (0..6).map(|i| i as f64).collect()).unwrap();
        let r = t.reshape(&[3, 2]).unwrap();
        assert_eq!(r.data(), t.data());
        assert!(t.reshape(&[4, 2]).is_err());
    }
}
