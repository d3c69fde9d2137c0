//! Dense row-major tensors and the small set of differentiable ops the
//! network is built from.

pub mod ops;

use crate::error::{CoreError, Result};

/// Scalar element type: `f32` or `f64`, chosen at tensor construction.
pub trait Scalar:
    num_traits::Float
    + num_traits::NumAssign
    + Default
    + Send
    + Sync
    + std::fmt::Debug
    + std::fmt::Display
    + 'static
{
    const DTYPE: &'static str;
    const BYTES: usize;

    fn from_f64(v: f64) -> Self;
    fn to_f64_(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;

    /// C(m,n) = alpha * A * B + beta * C with explicit row/col strides for A and B;
    /// C is row-major.
    #[allow(clippy::too_many_arguments)]
    fn gemm_strided(
        m: usize, k: usize, n: usize, alpha: Self,
        a: &[Self], rsa: isize, csa: isize,
        b: &[Self], rsb: isize, csb: isize,
        beta: Self, c: &mut [Self],
    );

    /// C = alpha * A(m,k) * B(k,n) + beta * C(m,n), all row-major.
    fn gemm(m: usize, k: usize, n: usize, alpha: Self, a: &[Self], b: &[Self], beta: Self, c: &mut [Self]) {
        Self::gemm_strided(m, k, n, alpha, a, k as isize, 1, b, n as isize, 1, beta, c);
    }
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";
    const BYTES: usize = 4;

    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64_(self) -> f64 {
        self as f64
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().unwrap())
    }
    fn gemm_strided(
        m: usize, k: usize, n: usize, alpha: Self,
        a: &[Self], rsa: isize, csa: isize,
        b: &[Self], rsb: isize, csb: isize,
        beta: Self, c: &mut [Self],
    ) {
        assert!(c.len() >= m * n);
        unsafe {
            matrixmultiply::sgemm(
                m, k, n, alpha,
                a.as_ptr(), rsa, csa,
                b.as_ptr(), rsb, csb,
                beta,
                c.as_mut_ptr(), n as isize, 1,
            );
        }
    }
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";
    const BYTES: usize = 8;

    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64_(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().unwrap())
    }
    fn gemm_strided(
        m: usize, k: usize, n: usize, alpha: Self,
        a: &[Self], rsa: isize, csa: isize,
        b: &[Self], rsb: isize, csb: isize,
        beta: Self, c: &mut [Self],
    ) {
        assert!(c.len() >= m * n);
        unsafe {
            matrixmultiply::dgemm(
                m, k, n, alpha,
                a.as_ptr(), rsa, csa,
                b.as_ptr(), rsb, csb,
                beta,
                c.as_mut_ptr(), n as isize, 1,
            );
        }
    }
}

/// Dense rank-N array, row-major (last axis fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![T::zero(); n] }
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![v; n] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(CoreError::shape(format!(
                "shape {:?} implies {} elements, got {}",
                shape, n, data.len()
            )));
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n: usize = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: (0..n).map(|i| f(i)).collect() }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
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

    /// Interpret as (N, C, H, W); errors if rank != 4.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        if self.shape.len() != 4 {
            return Err(CoreError::shape(format!("expected rank 4, got {:?}", self.shape)));
        }
        Ok((self.shape[0], self.shape[1], self.shape[2], self.shape[3]))
    }

    pub fn reshaped(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(CoreError::shape(format!(
                "cannot reshape {:?} into {:?}",
                self.shape, shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Rejects NaN/Inf entries; used by tests and data validation.
    pub fn validate_finite(&self) -> Result<()> {
        for (i, v) in self.data.iter().enumerate() {
            if !v.is_finite() {
                return Err(CoreError::InvalidArgument(format!(
                    "non-finite value {} at flat index {}",
                    v, i
                )));
            }
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.shape != other.shape {
            return Err(CoreError::shape("add: shapes differ".to_string()));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a + b).collect();
        Ok(Tensor { shape: self.shape.clone(), data })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        if self.shape != other.shape {
            return Err(CoreError::shape("sub: shapes differ".to_string()));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a - b).collect();
        Ok(Tensor { shape: self.shape.clone(), data })
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, &v| m.max(v.abs().to_f64_()))
    }

    pub fn dot(&self, other: &Self) -> T {
        debug_assert_eq!(self.shape, other.shape);
        self.data.iter().zip(&other.data).fold(T::zero(), |s, (&a, &b)| s + a * b)
    }

    pub fn sq_norm(&self) -> f64 {
        self.data.iter().fold(0.0, |s, &v| s + v.to_f64_() * v.to_f64_())
    }

    /// Elementwise convert between precisions.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::from_f64(v.to_f64_())).collect(),
        }
    }
}

/// Convolution weights + bias: weights (C_out, C_in, k, k), bias (C_out).
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T> {
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> ConvParams<T> {
    pub fn new(weights: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let (c_out, c_in, kh, kw) = weights.dims4()?;
        if kh != kw || kh % 2 == 0 {
            return Err(CoreError::InvalidArgument(format!(
                "kernel must be square with odd size, got {}x{}",
                kh, kw
            )));
        }
        if c_out < 1 || c_in < 1 {
            return Err(CoreError::InvalidArgument("conv needs >= 1 channel".into()));
        }
        if bias.shape() != [c_out] {
            return Err(CoreError::shape(format!(
                "bias shape {:?} != ({},)",
                bias.shape(),
                c_out
            )));
        }
        Ok(ConvParams { weights, bias })
    }

    pub fn zeros(c_out: usize, c_in: usize, k: usize) -> Self {
        ConvParams {
            weights: Tensor::zeros(&[c_out, c_in, k, k]),
            bias: Tensor::zeros(&[c_out]),
        }
    }

    pub fn c_out(&self) -> usize {
        self.weights.shape()[0]
    }
    pub fn c_in(&self) -> usize {
        self.weights.shape()[1]
    }
    pub fn kernel(&self) -> usize {
        self.weights.shape()[2]
    }
    pub fn num_params(&self) -> usize {
        self.weights.numel() + self.bias.numel()
    }
}

/// Train/eval switch for batch norm and dropout-style ops.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-channel batch norm parameters and running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub eps: T,
    pub momentum: T,
}

impl<T: Scalar> BatchNormState<T> {
    pub fn new(channels: usize, momentum: f64) -> Self {
        BatchNormState {
            gamma: Tensor::full(&[channels], T::one()),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], T::one()),
            eps: T::from_f64(1e-5),
            momentum: T::from_f64(momentum),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.shape()[0]
    }
}
