//! Dense tensors, trainable parameters, and the autodiff tape.
//!
//! [`Tensor`] is a plain shape-plus-data value with an optional gradient
//! buffer. [`Param`] wraps a tensor in shared ownership so the tape, the
//! model, and the optimizer all see the same storage. [`Tape`] records a
//! computation per forward pass and replays it in reverse to accumulate
//! gradients; see the module docs in [`tape`] for the walk order.

pub mod checkpoint;
pub mod gradcheck;
pub mod kernels;
pub mod optim;
pub mod tape;

use std::cell::{Ref, RefCell, RefMut};
use std::rc::Rc;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{CoreError, Result};
use crate::scalar::Scalar;

pub use optim::AdamState;
pub use tape::{Tape, TensorRef};

/// Dense row-major tensor over `f32` or `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T: Scalar> {
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    /// Tensor of zeros with the given shape.
    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    /// Tensor filled with a single value.
    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
            requires_grad: false,
            grad: None,
        }
    }

    /// Rank-0-like scalar stored as shape `[1]`.
    pub fn scalar(value: T) -> Self {
        Self::from_vec(vec![1], vec![value]).unwrap()
    }

    /// Builds a tensor from raw data, checking the element count.
    pub fn from_vec(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(CoreError::ShapeMismatch {
                op: "from_vec",
                lhs: shape,
                rhs: vec![data.len()],
            });
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    /// Normal-distributed entries with mean 0 and the given standard
    /// deviation, drawn in row-major order from `rng`. Sampling happens in
    /// f64 and is then cast, so f32 and f64 tensors built from the same
    /// seed agree to f32 precision.
    pub fn randn<R: Rng>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let dist = Normal::new(0.0f64, std).expect("std must be finite");
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| T::from_f64(dist.sample(rng))).collect();
        Tensor {
            shape: shape.to_vec(),
            data,
            requires_grad: false,
            grad: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
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

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    /// Marks the tensor as trainable. The gradient buffer is allocated
    /// lazily by the first [`Tensor::accumulate_grad`], so "no gradient
    /// yet" is observable as `grad() == None`.
    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    /// Removes and returns the accumulated gradient, leaving none behind.
    pub fn take_grad(&mut self) -> Option<Vec<T>> {
        self.grad.take()
    }

    /// Split mutable access to values and gradient, for optimizer updates.
    pub fn data_and_grad_mut(&mut self) -> (&mut [T], Option<&mut [T]>) {
        (&mut self.data, self.grad.as_deref_mut())
    }

    /// Adds `delta` into the gradient buffer, allocating it if needed.
    pub fn accumulate_grad(&mut self, delta: &[T]) {
        debug_assert_eq!(delta.len(), self.data.len());
        let grad = self
            .grad
            .get_or_insert_with(|| vec![T::zero(); self.data.len()]);
        for (g, d) in grad.iter_mut().zip(delta) {
            *g += *d;
        }
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    /// Errors if any element is NaN or infinite.
    pub fn ensure_finite(&self, context: &str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(CoreError::NonFinite {
                context: context.to_string(),
            })
        }
    }

    /// Element at a 2-D position; tensor must be rank 2.
    pub fn at2(&self, i: usize, j: usize) -> T {
        debug_assert_eq!(self.rank(), 2);
        self.data[i * self.shape[1] + j]
    }

    /// Converts element type, e.g. to run an f32 model's shapes in f64.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
            requires_grad: false,
            grad: None,
        }
    }
}

/// Shared handle to a named trainable tensor.
///
/// Cloning shares storage: the model keeps one clone per layer, the tape
/// keeps one per leaf it records, and the optimizer walks a flat list. The
/// tape is single-threaded by contract, so plain `Rc<RefCell<..>>` suffices.
#[derive(Debug, Clone)]
pub struct Param<T: Scalar> {
    name: Rc<str>,
    inner: Rc<RefCell<Tensor<T>>>,
}

impl<T: Scalar> Param<T> {
    pub fn new(name: &str, tensor: Tensor<T>) -> Self {
        Param {
            name: Rc::from(name),
            inner: Rc::new(RefCell::new(tensor.with_grad())),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn borrow(&self) -> Ref<'_, Tensor<T>> {
        self.inner.borrow()
    }

    pub fn borrow_mut(&self) -> RefMut<'_, Tensor<T>> {
        self.inner.borrow_mut()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.inner.borrow().shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.inner.borrow().numel()
    }

    /// Snapshot of the current values.
    pub fn values(&self) -> Vec<T> {
        self.inner.borrow().data().to_vec()
    }

    /// Overwrites the values in place; the shape must match.
    pub fn set_values(&self, values: &[T]) -> Result<()> {
        let mut t = self.inner.borrow_mut();
        if values.len() != t.numel() {
            return Err(CoreError::ShapeMismatch {
                op: "set_values",
                lhs: t.shape().to_vec(),
                rhs: vec![values.len()],
            });
        }
        t.data_mut().copy_from_slice(values);
        Ok(())
    }

    /// True when two handles point at the same storage.
    pub fn same_storage(&self, other: &Param<T>) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_element_count() {
        let err = Tensor::<f32>::from_vec(vec![2, 3], vec![1.0; 5]).unwrap_err();
        assert!(matches!(err, CoreError::ShapeMismatch { .. }));
    }

    #[test]
    fn grad_accumulates_without_zeroing() {
        let mut t = Tensor::<f64>::zeros(&[3]).with_grad();
        t.accumulate_grad(&[1.0, 2.0, 3.0]);
        t.accumulate_grad(&[1.0, 2.0, 3.0]);
        assert_eq!(t.grad().unwrap(), &[2.0, 4.0, 6.0]);
        t.zero_grad();
        assert_eq!(t.grad().unwrap(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn ensure_finite_flags_nan() {
        let t = Tensor::<f32>::from_vec(vec![2], vec![1.0, f32::NAN]).unwrap();
        assert!(matches!(
            t.ensure_finite("unit"),
            Err(CoreError::NonFinite { .. })
        ));
        let ok = Tensor::<f32>::from_vec(vec![2], vec![1.0, 2.0]).unwrap();
        assert!(ok.ensure_finite("unit").is_ok());
    }

    #[test]
    fn params_share_storage_across_clones() {
        let p = Param::new("w", Tensor::<f32>::zeros(&[2]));
        let q = p.clone();
        p.borrow_mut().data_mut()[0] = 5.0;
        assert_eq!(q.values(), vec![5.0, 0.0]);
        assert!(p.same_storage(&q));
    }

    #[test]
    fn randn_is_deterministic_for_a_seed() {
        use rand::SeedableRng;
        let mut a = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut b = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let x = Tensor::<f32>::randn(&[4, 4], 0.1, &mut a);
        let y = Tensor::<f32>::randn(&[4, 4], 0.1, &mut b);
        assert_eq!(x.data(), y.data());
    }
}
