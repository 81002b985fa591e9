//! Minimal reverse-mode automatic differentiation over dense f32 tensors.
//!
//! The operator set is exactly what small convolutional generators,
//! discriminators, and regressors need: conv2d, dense, a few activations,
//! instance norm, nearest-neighbor upsampling, and scalar reductions.
//! Forward values are recorded on a [`Tape`]; [`Tape::backward`] replays the
//! recording in reverse, accumulates gradients additively, and consumes the
//! tape.
//!
//! Everything is deliberately sequential: reductions run in recording order
//! with fixed accumulation, so a seeded run reproduces bit-for-bit.

mod adam;
mod conv;
mod gradcheck;
mod tape;

pub use adam::{Adam, AdamConfig};
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use tape::{GradStore, Tape, TapeId};

use std::cell::{Ref, RefCell, RefMut};
use std::rc::Rc;

use crate::error::{Error, Result};

/// Dense n-dimensional f32 array with an optional gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
    grad: Option<Vec<f32>>,
    pub requires_grad: bool,
}

impl Tensor {
    /// Builds a tensor, enforcing `product(shape) == data.len()` and that
    /// every dimension is positive.
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Tensor> {
        if shape.contains(&0) {
            return Err(Error::shape(
                "tensor",
                format!("zero dimension in shape {shape:?}"),
            ));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(
                "tensor",
                format!(
                    "shape {shape:?} holds {numel} elements but buffer has {}",
                    data.len()
                ),
            ));
        }
        Ok(Tensor {
            shape,
            data,
            grad: None,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Tensor {
        let numel = shape.iter().product();
        Tensor::new(shape, vec![0.0; numel]).expect("zeros: positive dims")
    }

    pub fn scalar(v: f32) -> Tensor {
        Tensor::new(vec![1], vec![v]).expect("scalar")
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Mutable view of the buffer. The shape is fixed, so the length
    /// invariant cannot be broken through this.
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn grad(&self) -> Option<&[f32]> {
        self.grad.as_deref()
    }

    /// Adds `delta` into the gradient buffer, creating it as zeros first if
    /// absent. Gradients therefore accumulate across backward passes until
    /// an optimizer step (or an explicit [`Tensor::zero_grad`]) clears them.
    pub fn accumulate_grad(&mut self, delta: &[f32]) {
        assert_eq!(delta.len(), self.data.len(), "gradient shape mismatch");
        let g = self.grad.get_or_insert_with(|| vec![0.0; self.data.len()]);
        for (gi, di) in g.iter_mut().zip(delta) {
            *gi += di;
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// Removes and returns the gradient buffer.
    pub fn take_grad(&mut self) -> Option<Vec<f32>> {
        self.grad.take()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// A trainable tensor shared between a model and the tapes that use it.
///
/// Cloning a `Param` clones the handle, not the values; gradient
/// accumulation and optimizer updates go through the shared cell.
#[derive(Clone)]
pub struct Param(Rc<RefCell<Tensor>>);

impl Param {
    pub fn new(mut tensor: Tensor) -> Param {
        tensor.requires_grad = true;
        Param(Rc::new(RefCell::new(tensor)))
    }

    pub fn borrow(&self) -> Ref<'_, Tensor> {
        self.0.borrow()
    }

    pub fn borrow_mut(&self) -> RefMut<'_, Tensor> {
        self.0.borrow_mut()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.0.borrow().shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.0.borrow().numel()
    }

    pub fn ptr_eq(&self, other: &Param) -> bool {
        Rc::ptr_eq(&self.0, &other.0)
    }
}

impl std::fmt::Debug for Param {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let t = self.0.borrow();
        write!(f, "Param{:?}", t.shape())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_rejects_mismatched_buffer() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn grad_accumulates_additively() {
        let mut t = Tensor::zeros(vec![3]);
        t.accumulate_grad(&[1.0, 2.0, 3.0]);
        t.accumulate_grad(&[1.0, 1.0, 1.0]);
        assert_eq!(t.grad().unwrap(), &[2.0, 3.0, 4.0]);
        t.zero_grad();
        assert!(t.grad().is_none());
    }

    #[test]
    fn params_share_storage() {
        let p = Param::new(Tensor::zeros(vec![2]));
        let q = p.clone();
        q.borrow_mut().data_mut()[0] = 5.0;
        assert_eq!(p.borrow().data()[0], 5.0);
        assert!(p.ptr_eq(&q));
    }
}
