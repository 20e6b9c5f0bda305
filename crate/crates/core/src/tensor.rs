//! Dense row-major f32 tensors.
//!
//! Tensors are immutable once created; every operation on the tape produces a
//! fresh tensor. Gradients are not stored inside the tensor but in a
//! [`crate::tape::GradStore`] keyed by tensor id, so the same parameter can be
//! reused across many tapes.

use alloc::format;
use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug)]
pub struct TensorData {
    pub(crate) id: u64,
    pub(crate) shape: Vec<usize>,
    pub(crate) data: Vec<f32>,
    pub(crate) requires_grad: bool,
}

/// Cheaply clonable handle to an immutable value buffer.
#[derive(Debug, Clone)]
pub struct Tensor {
    pub(crate) inner: Rc<TensorData>,
}

impl Tensor {
    /// Leaf tensor that does not participate in differentiation.
    pub fn new(shape: &[usize], data: Vec<f32>) -> Result<Tensor> {
        Tensor::build(shape, data, false)
    }

    /// Leaf tensor whose gradient will be collected by `Tape::backward`.
    pub fn param(shape: &[usize], data: Vec<f32>) -> Result<Tensor> {
        Tensor::build(shape, data, true)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::build(shape, vec![0.0; n], false).expect("zeros")
    }

    pub fn scalar(v: f32) -> Result<Tensor> {
        Tensor::new(&[1], vec![v])
    }

    pub(crate) fn build(shape: &[usize], data: Vec<f32>, requires_grad: bool) -> Result<Tensor> {
        let expect: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::shape(
                "tensor",
                format!("zero-sized dimension in {:?}", shape),
            ));
        }
        if expect != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {:?} wants {} values, got {}", shape, expect, data.len()),
            ));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "tensor created with non-finite value {bad}"
            )));
        }
        Ok(Tensor {
            inner: Rc::new(TensorData {
                id: fresh_id(),
                shape: shape.to_vec(),
                data,
                requires_grad,
            }),
        })
    }

    /// Internal constructor for op outputs: finiteness already verified.
    pub(crate) fn from_op(shape: Vec<usize>, data: Vec<f32>, requires_grad: bool) -> Tensor {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            inner: Rc::new(TensorData {
                id: fresh_id(),
                shape,
                data,
                requires_grad,
            }),
        }
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.inner.data
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn len(&self) -> usize {
        self.inner.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inner.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.len() == 1
    }

    /// Scalar value; errors when the tensor has more than one element.
    pub fn item(&self) -> Result<f32> {
        if !self.is_scalar() {
            return Err(Error::shape(
                "item",
                format!("expected scalar, got shape {:?}", self.shape()),
            ));
        }
        Ok(self.inner.data[0])
    }

    /// Rows/cols of a rank-2 tensor. Rank-1 tensors are treated as one row.
    pub fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape() {
            [n] => Ok((1, *n)),
            [r, c] => Ok((*r, *c)),
            other => Err(Error::shape(op, format!("expected rank <= 2, got {other:?}"))),
        }
    }

    /// Same id means same underlying buffer.
    pub fn same_as(&self, other: &Tensor) -> bool {
        self.inner.id == other.inner.id
    }
}

pub(crate) fn check_finite(op: &'static str, data: &[f32]) -> Result<()> {
    for v in data {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("{op} produced {v}")));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_product_enforced() {
        assert!(Tensor::new(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(&[2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::new(&[0], vec![]).is_err());
    }

    #[test]
    fn non_finite_rejected() {
        let err = Tensor::new(&[2], vec![1.0, f32::NAN]).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
    }

    #[test]
    fn ids_unique() {
        let a = Tensor::scalar(1.0).unwrap();
        let b = Tensor::scalar(1.0).unwrap();
        assert_ne!(a.id(), b.id());
        assert!(a.same_as(&a.clone()));
    }
}
