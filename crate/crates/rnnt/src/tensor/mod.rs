//! Dense tensors, reverse-mode autodiff, seeded randomness and the numeric
//! primitives the rest of the crate builds on.

pub mod check;
pub mod linalg;
pub mod rng;
pub mod tape;

use crate::error::{Error, Result};
use rng::RngStream;

/// Scalar storage type. f64 by default; the `f32` feature trades precision
/// for training speed. Correctness tests assume the f64 build.
#[cfg(not(feature = "f32"))]
pub type Real = f64;
#[cfg(feature = "f32")]
pub type Real = f32;

/// Dense row-major n-dimensional array with an optional gradient slot.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<Real>,
    pub grad: Option<Vec<Real>>,
    pub requires_grad: bool,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<Real>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::ShapeMismatch {
                op: "tensor_new",
                lhs: shape,
                rhs: vec![data.len()],
            });
        }
        Ok(Tensor {
            shape,
            data,
            grad: None,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; numel],
            grad: None,
            requires_grad: false,
        }
    }

    pub fn filled(shape: Vec<usize>, value: Real) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; numel],
            grad: None,
            requires_grad: false,
        }
    }

    pub fn scalar(value: Real) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
            grad: None,
            requires_grad: false,
        }
    }

    /// Square identity matrix.
    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(vec![n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Standard normal entries scaled by `scale`.
    pub fn randn(shape: Vec<usize>, scale: Real, rng: &mut RngStream) -> Self {
        let numel: usize = shape.iter().product();
        let mut buf = vec![0.0f64; numel];
        rng.fill_gaussian(&mut buf);
        Tensor {
            shape,
            data: buf.into_iter().map(|x| x as Real * scale).collect(),
            grad: None,
            requires_grad: false,
        }
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[Real] {
        &self.data
    }

    /// Mutable view of the raw buffer. The shape is fixed at construction,
    /// so writes cannot break the shape/length invariant.
    pub fn data_mut(&mut self) -> &mut [Real] {
        &mut self.data
    }

    /// Rows of a 2-D tensor (first dimension).
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Columns of a 2-D tensor (second dimension).
    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn is_matrix(&self) -> bool {
        self.shape.len() == 2
    }

    pub fn row(&self, r: usize) -> &[Real] {
        let w = self.cols();
        &self.data[r * w..(r + 1) * w]
    }

    pub fn at2(&self, r: usize, c: usize) -> Real {
        self.data[r * self.shape[1] + c]
    }

    pub fn frobenius_norm(&self) -> Real {
        self.data.iter().map(|x| x * x).sum::<Real>().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Attach a gradient buffer (same shape); used by the parameter registry
    /// when pulling gradients off a tape.
    pub fn set_grad(&mut self, grad: Vec<Real>) -> Result<()> {
        if grad.len() != self.data.len() {
            return Err(Error::ShapeMismatch {
                op: "set_grad",
                lhs: self.shape.clone(),
                rhs: vec![grad.len()],
            });
        }
        self.grad = Some(grad);
        Ok(())
    }
}

/// max |a - b| over two equal-length slices.
pub fn max_abs_diff(a: &[Real], b: &[Real]) -> Real {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, Real::max)
}
