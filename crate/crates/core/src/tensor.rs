//! Dense double-precision tensors.
//!
//! A `Tensor` is a cheaply clonable handle to shared storage: shape, row-major
//! data, and an optional gradient of identical shape. Ops copy — there are no
//! views or aliasing. Everything is f64; non-finite values are treated as an
//! error state and rejected at construction and after every op.

use std::cell::{Ref, RefCell};
use std::rc::Rc;

use crate::error::{Error, Result};

fn next_id() -> u64 {
    thread_local! {
        static COUNTER: std::cell::Cell<u64> = const { std::cell::Cell::new(0) };
    }
    COUNTER.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

#[derive(Debug)]
pub(crate) struct TensorData {
    pub(crate) shape: Vec<usize>,
    pub(crate) data: Vec<f64>,
    pub(crate) grad: Option<Vec<f64>>,
    pub(crate) requires_grad: bool,
    pub(crate) name: Option<String>,
}

/// Handle to a tensor confined to one thread. Clones share storage.
#[derive(Clone, Debug)]
pub struct Tensor {
    pub(crate) inner: Rc<RefCell<TensorData>>,
    pub(crate) id: u64,
}

impl Tensor {
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(Error::InvalidArgument {
                op: "tensor",
                msg: format!("data length {} != product of extents {:?}", data.len(), shape),
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("tensor construction"));
        }
        Ok(Self::from_parts(data, shape.to_vec(), false, None))
    }

    /// Leaf parameter: named, requires gradients.
    pub fn param(name: &str, data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        let t = Tensor::new(data, shape)?;
        {
            let mut d = t.inner.borrow_mut();
            d.requires_grad = true;
            d.name = Some(name.to_string());
        }
        Ok(t)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        let numel = shape.iter().product();
        Self::from_parts(vec![0.0; numel], shape.to_vec(), false, None)
    }

    pub fn scalar(v: f64) -> Tensor {
        Self::from_parts(vec![v], vec![1], false, None)
    }

    pub(crate) fn from_parts(
        data: Vec<f64>,
        shape: Vec<usize>,
        requires_grad: bool,
        name: Option<String>,
    ) -> Tensor {
        Tensor {
            inner: Rc::new(RefCell::new(TensorData {
                shape,
                data,
                grad: None,
                requires_grad,
                name,
            })),
            id: next_id(),
        }
    }

    pub fn shape(&self) -> Vec<usize> {
        self.inner.borrow().shape.clone()
    }

    pub fn rank(&self) -> usize {
        self.inner.borrow().shape.len()
    }

    pub fn numel(&self) -> usize {
        self.inner.borrow().data.len()
    }

    pub fn name(&self) -> Option<String> {
        self.inner.borrow().name.clone()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.borrow().requires_grad
    }

    /// Borrow of the raw data. Do not hold across ops that may mutate this tensor.
    pub fn data(&self) -> Ref<'_, [f64]> {
        Ref::map(self.inner.borrow(), |d| d.data.as_slice())
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.inner.borrow().data.clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        let d = self.inner.borrow();
        assert_eq!(d.data.len(), 1, "item() on tensor with {} elements", d.data.len());
        d.data[0]
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.borrow().grad.clone()
    }

    pub fn zero_grad(&self) {
        self.inner.borrow_mut().grad = None;
    }

    /// Copy with gradients cut: same values, no grad requirement, no name.
    pub fn detach(&self) -> Tensor {
        let d = self.inner.borrow();
        Self::from_parts(d.data.clone(), d.shape.clone(), false, None)
    }

    /// Overwrite the stored values. Shape must match; used by optimizers and
    /// checkpoint loading.
    pub fn set_data(&self, values: &[f64]) -> Result<()> {
        let mut d = self.inner.borrow_mut();
        if values.len() != d.data.len() {
            return Err(Error::InvalidArgument {
                op: "set_data",
                msg: format!("length {} != {}", values.len(), d.data.len()),
            });
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("set_data"));
        }
        d.data.copy_from_slice(values);
        Ok(())
    }

    pub(crate) fn accumulate_grad(&self, contribution: &[f64]) {
        let mut d = self.inner.borrow_mut();
        debug_assert_eq!(contribution.len(), d.data.len());
        match &mut d.grad {
            Some(g) => {
                for (gi, ci) in g.iter_mut().zip(contribution) {
                    *gi += ci;
                }
            }
            None => d.grad = Some(contribution.to_vec()),
        }
    }

    pub(crate) fn ensure_zero_grad(&self) {
        let mut d = self.inner.borrow_mut();
        if d.grad.is_none() {
            d.grad = Some(vec![0.0; d.data.len()]);
        }
    }

    pub(crate) fn set_grad(&self, g: Vec<f64>) {
        self.inner.borrow_mut().grad = Some(g);
    }

    pub fn display_name(&self) -> String {
        self.name().unwrap_or_else(|| format!("tensor#{}", self.id))
    }
}

/// Set every gradient in the slice to absent.
pub fn zero_grads(params: &[Tensor]) {
    for p in params {
        p.zero_grad();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_wrong_length() {
        assert!(Tensor::new(vec![1.0, 2.0], &[3]).is_err());
    }

    #[test]
    fn rejects_non_finite() {
        assert!(Tensor::new(vec![f64::NAN], &[1]).is_err());
        assert!(Tensor::new(vec![f64::INFINITY], &[1]).is_err());
    }

    #[test]
    fn grad_accumulates_additively() {
        let t = Tensor::new(vec![1.0, 2.0], &[2]).unwrap();
        t.accumulate_grad(&[0.5, 0.5]);
        t.accumulate_grad(&[1.0, -0.5]);
        assert_eq!(t.grad().unwrap(), vec![1.5, 0.0]);
    }

    #[test]
    fn detach_copies_values_without_grad() {
        let p = Tensor::param("w", vec![3.0], &[1]).unwrap();
        let d = p.detach();
        assert!(!d.requires_grad());
        assert_eq!(d.to_vec(), vec![3.0]);
        assert!(d.name().is_none());
    }
}
