use std::cell::{Ref, RefCell};
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};

/// Dense 64-bit tensor of rank 1 or 2 (row-major) with a lazily allocated
/// gradient accumulator.
///
/// `Tensor` is a reference-counted handle: cloning yields another view of
/// the same storage. That is how a parameter used at several time steps
/// accumulates gradient from every use site during one backward pass.
/// Values are interior-mutable so optimizers can update parameters in
/// place; tensors that never receive gradients are treated as immutable
/// after creation.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<Inner>,
}

struct Inner {
    shape: Vec<usize>,
    values: RefCell<Vec<f64>>,
    grad: RefCell<Option<Vec<f64>>>,
}

impl Tensor {
    /// General checked constructor. Rank must be 1 or 2 and the value count
    /// must equal the product of the dimensions.
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Tensor> {
        if shape.is_empty() || shape.len() > 2 {
            return Err(Error::Dimension(format!(
                "tensor rank must be 1 or 2, got shape {shape:?}"
            )));
        }
        let expect: usize = shape.iter().product();
        if expect != values.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} holds {expect} elements but {} values were given",
                values.len()
            )));
        }
        Ok(Tensor {
            inner: Rc::new(Inner {
                shape,
                values: RefCell::new(values),
                grad: RefCell::new(None),
            }),
        })
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::new(shape.to_vec(), vec![0.0; n]).expect("valid zero tensor shape")
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::new(vec![1], vec![v]).expect("scalar shape")
    }

    pub fn vector(values: Vec<f64>) -> Tensor {
        let n = values.len();
        Tensor::new(vec![n], values).expect("vector shape")
    }

    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Tensor> {
        Tensor::new(vec![rows, cols], values)
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn rank(&self) -> usize {
        self.inner.shape.len()
    }

    /// Total number of elements.
    pub fn len(&self) -> usize {
        self.inner.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Rows and columns of a rank-2 tensor.
    pub fn dims2(&self) -> Option<(usize, usize)> {
        match self.inner.shape.as_slice() {
            [r, c] => Some((*r, *c)),
            _ => None,
        }
    }

    /// Borrow the raw values (row-major).
    pub fn values(&self) -> Ref<'_, [f64]> {
        Ref::map(self.inner.values.borrow(), |v| v.as_slice())
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.inner.values.borrow().clone()
    }

    /// Value of a one-element tensor. Panics otherwise.
    pub fn item(&self) -> f64 {
        let v = self.inner.values.borrow();
        assert_eq!(v.len(), 1, "item() requires a scalar tensor");
        v[0]
    }

    /// Flat-index read.
    pub fn get(&self, i: usize) -> f64 {
        self.inner.values.borrow()[i]
    }

    /// Flat-index write (parameter perturbation, optimizer internals).
    pub fn set(&self, i: usize, v: f64) {
        self.inner.values.borrow_mut()[i] = v;
    }

    /// Replace all values; the length must match the shape.
    pub fn set_values(&self, values: &[f64]) -> Result<()> {
        if values.len() != self.len() {
            return Err(Error::Dimension(format!(
                "set_values with {} values on a tensor of shape {:?}",
                values.len(),
                self.shape()
            )));
        }
        self.inner.values.borrow_mut().copy_from_slice(values);
        Ok(())
    }

    /// Mutate values in place through a closure.
    pub fn with_values_mut<R>(&self, f: impl FnOnce(&mut [f64]) -> R) -> R {
        f(&mut self.inner.values.borrow_mut())
    }

    pub fn all_finite(&self) -> bool {
        self.inner.values.borrow().iter().all(|v| v.is_finite())
    }

    /// Copy of the gradient, if one has been accumulated.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.grad.borrow().clone()
    }

    /// Gradient copy, treating an unallocated gradient as all zeros.
    pub fn grad_or_zeros(&self) -> Vec<f64> {
        self.grad().unwrap_or_else(|| vec![0.0; self.len()])
    }

    /// Drop the gradient accumulator entirely.
    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// Add `delta` into the gradient accumulator, allocating it on first use.
    pub fn accumulate_grad(&self, delta: &[f64]) {
        debug_assert_eq!(delta.len(), self.len());
        let mut slot = self.inner.grad.borrow_mut();
        let grad = slot.get_or_insert_with(|| vec![0.0; self.len()]);
        for (g, d) in grad.iter_mut().zip(delta) {
            *g += d;
        }
    }

    /// Add `delta` into the gradient slice starting at flat index `start`.
    pub(crate) fn accumulate_grad_range(&self, start: usize, delta: &[f64]) {
        debug_assert!(start + delta.len() <= self.len());
        let mut slot = self.inner.grad.borrow_mut();
        let grad = slot.get_or_insert_with(|| vec![0.0; self.len()]);
        for (g, d) in grad[start..start + delta.len()].iter_mut().zip(delta) {
            *g += d;
        }
    }

    /// Scale values in place (no gradient bookkeeping; optimizer use only).
    pub fn scale_values(&self, k: f64) {
        for v in self.inner.values.borrow_mut().iter_mut() {
            *v *= k;
        }
    }

    /// True when both handles point at the same storage.
    pub fn ptr_eq(&self, other: &Tensor) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = self.inner.values.borrow();
        if v.len() <= 8 {
            write!(f, "Tensor{:?}{:?}", self.inner.shape, &v[..])
        } else {
            write!(
                f,
                "Tensor{:?}[{:?}, ... {} values]",
                self.inner.shape,
                &v[..4],
                v.len()
            )
        }
    }
}
