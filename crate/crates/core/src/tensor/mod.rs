//! Dense row-major tensors and a reverse-mode tape.
//!
//! Tensors are immutable values backed by a shared buffer, so cloning one is
//! cheap and a parameter set can be read from many threads at once. All
//! differentiable computation goes through [`Tape`]; a tape is owned by one
//! thread for the duration of a forward/backward pass.

mod checkpoint;
mod kernels;
mod tape;

use std::fmt::Debug;
use std::iter::Sum;
use std::sync::Arc;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC};
pub use kernels::{gelu, gelu_grad, matmul_into};
pub use tape::{Gradients, Tape, Var};

use crate::{ArdError, Result};

/// Floating-point element type. Everything runs in `f32`; `f64` exists so
/// gradient checks can difference the exact same code without rounding noise.
pub trait Real: num_traits::Float + Sum + Default + Debug + Send + Sync + 'static {
    fn of(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn of(x: f64) -> Self {
        x
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T: Real = f32> {
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if numel(&shape) != data.len() {
            return Err(ArdError::dim(format!("shape {shape:?} holds {} elements, got {}", numel(&shape), data.len())));
        }
        Ok(Tensor { shape, data: Arc::new(data) })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor { shape: shape.to_vec(), data: Arc::new(vec![T::zero(); numel(shape)]) }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Tensor { shape: shape.to_vec(), data: Arc::new(vec![value; numel(shape)]) }
    }

    pub fn scalar(value: T) -> Self {
        Tensor { shape: Vec::new(), data: Arc::new(vec![value]) }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n = numel(shape);
        Tensor { shape: shape.to_vec(), data: Arc::new((0..n).map(&mut f).collect()) }
    }

    /// Square identity matrix.
    pub fn eye(n: usize) -> Self {
        Self::from_fn(&[n, n], |i| if i / n == i % n { T::one() } else { T::zero() })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// Mutable access; copies the buffer first if it is shared.
    pub fn data_mut(&mut self) -> &mut [T] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Rows and columns of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(ArdError::dim(format!("expected a matrix, got shape {:?}", self.shape))),
        }
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        if numel(shape) != self.numel() {
            return Err(ArdError::dim(format!("cannot reshape {:?} to {shape:?}", self.shape)));
        }
        Ok(Tensor { shape: shape.to_vec(), data: Arc::clone(&self.data) })
    }

    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor { shape: self.shape.clone(), data: Arc::new(self.data.iter().map(|&x| U::of(x.as_f64())).collect()) }
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|&x| x.as_f64() * x.as_f64()).sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> f64 {
        self.data.iter().zip(other.data.iter()).map(|(&a, &b)| (a.as_f64() - b.as_f64()).abs()).fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_data() {
        assert!(Tensor::<f32>::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(matches!(Tensor::<f32>::new(vec![2, 3], vec![0.0; 5]), Err(ArdError::Dimension(_))));
    }

    #[test]
    fn data_mut_does_not_alias_clones() {
        let a = Tensor::<f32>::zeros(&[3]);
        let mut b = a.clone();
        b.data_mut()[0] = 1.0;
        assert_eq!(a.data()[0], 0.0);
        assert_eq!(b.data()[0], 1.0);
    }
}
