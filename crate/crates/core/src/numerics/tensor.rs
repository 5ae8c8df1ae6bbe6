use std::fmt;
use std::sync::Arc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{CwError, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// Backward rule of a recorded operation: maps the adjoint of the output to
/// one adjoint buffer per parent, in parent order.
pub(crate) type BackwardFn = Box<dyn Fn(&[f64]) -> Vec<Vec<f64>> + Send + Sync>;

pub(crate) struct Inner {
    pub(crate) id: u64,
    pub(crate) shape: Vec<usize>,
    pub(crate) data: Vec<f64>,
    pub(crate) requires_grad: bool,
    pub(crate) parents: Vec<Tensor>,
    pub(crate) backward: Option<BackwardFn>,
}

/// Dense row-major f64 tensor. Values are immutable after creation; operations
/// return new tensors and record themselves for reverse-mode differentiation
/// whenever an input participates in gradient computation.
#[derive(Clone)]
pub struct Tensor {
    pub(crate) inner: Arc<Inner>,
}

impl Tensor {
    fn alloc(
        shape: Vec<usize>,
        data: Vec<f64>,
        requires_grad: bool,
        parents: Vec<Tensor>,
        backward: Option<BackwardFn>,
    ) -> Tensor {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            inner: Arc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data,
                requires_grad,
                parents,
                backward,
            }),
        }
    }

    /// Constant tensor from explicit shape and row-major data.
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(CwError::Dimension(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Tensor::alloc(shape.to_vec(), data, false, Vec::new(), None))
    }

    /// Gradient leaf (a trainable parameter or an input under test).
    pub fn parameter(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let t = Tensor::from_vec(shape, data)?;
        Ok(Tensor::alloc(
            t.inner.shape.clone(),
            t.inner.data.clone(),
            true,
            Vec::new(),
            None,
        ))
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        let numel = shape.iter().product();
        Tensor::alloc(shape.to_vec(), vec![0.0; numel], false, Vec::new(), None)
    }

    pub fn filled(shape: &[usize], value: f64) -> Tensor {
        let numel = shape.iter().product();
        Tensor::alloc(shape.to_vec(), vec![value; numel], false, Vec::new(), None)
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor::alloc(vec![1], vec![value], false, Vec::new(), None)
    }

    pub fn eye(d: usize) -> Tensor {
        let mut data = vec![0.0; d * d];
        for i in 0..d {
            data[i * d + i] = 1.0;
        }
        Tensor::alloc(vec![d, d], data, false, Vec::new(), None)
    }

    /// Result of an operation. Drops graph bookkeeping when no parent needs
    /// gradients so inference builds no graph.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<f64>,
        parents: Vec<Tensor>,
        backward: BackwardFn,
    ) -> Tensor {
        let requires_grad = parents.iter().any(|p| p.inner.requires_grad);
        if requires_grad {
            Tensor::alloc(shape, data, true, parents, Some(backward))
        } else {
            Tensor::alloc(shape, data, false, Vec::new(), None)
        }
    }

    /// Same values, detached from the graph.
    pub fn detach(&self) -> Tensor {
        Tensor::alloc(
            self.inner.shape.clone(),
            self.inner.data.clone(),
            false,
            Vec::new(),
            None,
        )
    }

    /// Same values as a fresh gradient leaf.
    pub fn detach_as_parameter(&self) -> Tensor {
        Tensor::alloc(
            self.inner.shape.clone(),
            self.inner.data.clone(),
            true,
            Vec::new(),
            None,
        )
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.inner.data
    }

    pub fn numel(&self) -> usize {
        self.inner.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.inner.backward.is_none()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.numel() != 1 {
            return Err(CwError::Contract(format!(
                "item() requires a scalar, shape is {:?}",
                self.shape()
            )));
        }
        Ok(self.inner.data[0])
    }

    pub fn is_finite(&self) -> bool {
        self.inner.data.iter().all(|v| v.is_finite())
    }

    /// Extents of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape() {
            [r, c] => Ok((*r, *c)),
            s => Err(CwError::Dimension(format!("expected rank 2, got {:?}", s))),
        }
    }

    /// Extents of a rank-4 tensor.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape() {
            [n, c, h, w] => Ok((*n, *c, *h, *w)),
            s => Err(CwError::Dimension(format!("expected rank 4, got {:?}", s))),
        }
    }

    /// Entry of a rank-2 tensor.
    pub fn at2(&self, i: usize, j: usize) -> f64 {
        let (_, c) = (self.inner.shape[0], self.inner.shape[1]);
        self.inner.data[i * c + j]
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .field("data", &self.inner.data)
            .finish()
    }
}
