//! N-dimensional tensors with reverse-mode differentiation.
//!
//! A [`Tensor`] is an immutable row-major array plus, when the value
//! participates in a tracked computation, a handle into the implicit
//! computation graph. Ops record what produced them; [`Tensor::backward`]
//! walks that record in reverse and fills the `grad` slot of every
//! tracked ancestor. A graph is single-use: call `backward` once, read
//! the gradients, drop the tensors.
//!
//! Storage is `f32` throughout the pipeline; the same ops instantiate at
//! `f64` so gradient-check tests can run a high-precision shadow of the
//! exact code path they validate.

mod io;
mod linalg;
mod ops;

pub use io::{read_tensor, read_tensor_from, write_tensor, write_tensor_to};
pub use ops::{BnState, Mode};

use std::collections::HashSet;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};

/// Scalar types the engine runs on.
pub trait Elem:
    num_traits::Float
    + num_traits::NumAssignOps
    + Send
    + Sync
    + std::fmt::Debug
    + std::fmt::Display
    + Default
    + 'static
{
    #[inline]
    fn from64(v: f64) -> Self {
        num_traits::NumCast::from(v).expect("f64 converts to element type")
    }
    #[inline]
    fn to64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).expect("element type converts to f64")
    }
}
impl Elem for f32 {}
impl Elem for f64 {}

struct Inner<T: Elem> {
    data: Vec<T>,
    shape: Vec<usize>,
    /// Participates in gradient computation (leaf marked by the caller,
    /// or derived from at least one tracked parent).
    tracked: bool,
    grad: Mutex<Option<Vec<T>>>,
    /// Recorded producer; `None` for leaves and for pure-eval results.
    op: Option<ops::Op<T>>,
    backward_done: AtomicBool,
}

/// Immutable n-dimensional array handle. Cloning is cheap (`Arc`).
pub struct Tensor<T: Elem = f32> {
    inner: Arc<Inner<T>>,
}

impl<T: Elem> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Arc::clone(&self.inner),
        }
    }
}

impl<T: Elem> std::fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "Tensor(shape={:?}, tracked={}, numel={})",
            self.shape(),
            self.requires_grad(),
            self.numel()
        )
    }
}

impl<T: Elem> Tensor<T> {
    /// Untracked tensor from raw data.
    pub fn new(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(Error::shape(format!(
                "data length {} does not match shape {:?} (numel {})",
                data.len(),
                shape,
                numel
            )));
        }
        Ok(Self::from_parts(data, shape.to_vec(), false, None))
    }

    /// Gradient-tracked leaf (a parameter or a probed input).
    pub fn param(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(Error::shape(format!(
                "data length {} does not match shape {:?} (numel {})",
                data.len(),
                shape,
                numel
            )));
        }
        Ok(Self::from_parts(data, shape.to_vec(), true, None))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel: usize = shape.iter().product();
        Self::from_parts(vec![T::zero(); numel], shape.to_vec(), false, None)
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let numel: usize = shape.iter().product();
        Self::from_parts(vec![value; numel], shape.to_vec(), false, None)
    }

    pub fn scalar(value: T) -> Self {
        Self::from_parts(vec![value], Vec::new(), false, None)
    }

    /// Tracked leaf sharing this tensor's values (fresh grad slot, no
    /// producer). Parameters re-enter each training step through this.
    pub fn tracked_leaf(&self) -> Self {
        Self::from_parts(self.inner.data.clone(), self.inner.shape.clone(), true, None)
    }

    fn from_parts(data: Vec<T>, shape: Vec<usize>, tracked: bool, op: Option<ops::Op<T>>) -> Self {
        Tensor {
            inner: Arc::new(Inner {
                data,
                shape,
                tracked,
                grad: Mutex::new(None),
                op,
                backward_done: AtomicBool::new(false),
            }),
        }
    }

    pub(crate) fn from_op(data: Vec<T>, shape: Vec<usize>, op: ops::Op<T>) -> Self {
        let tracked = op.parents().iter().any(|p| p.inner.tracked);
        if tracked {
            Self::from_parts(data, shape, true, Some(op))
        } else {
            // Pure-eval result: keep no graph behind it.
            Self::from_parts(data, shape, false, None)
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.inner.data
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.tracked
    }

    /// Single value of a scalar tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.numel(), 1, "item() on non-scalar tensor");
        self.inner.data[0]
    }

    /// Copy of the gradient, if backward has populated one.
    pub fn grad(&self) -> Option<Vec<T>> {
        self.inner.grad.lock().unwrap().clone()
    }

    pub fn to_f64(&self) -> Tensor<f64> {
        Tensor::<f64>::new(
            self.inner.data.iter().map(|v| v.to64()).collect(),
            &self.inner.shape,
        )
        .expect("shape preserved")
    }

    pub fn all_finite(&self) -> bool {
        self.inner.data.iter().all(|v| v.is_finite())
    }

    fn accumulate_grad(&self, delta: &[T]) {
        debug_assert_eq!(delta.len(), self.numel());
        let mut slot = self.inner.grad.lock().unwrap();
        match slot.as_mut() {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(delta) {
                    *gi += *di;
                }
            }
            None => *slot = Some(delta.to_vec()),
        }
    }

    /// Reverse-mode differentiation from a scalar result.
    ///
    /// Fills the `grad` slot of every tracked tensor in the producing
    /// graph. Errors on a non-scalar, on an untracked value, and on a
    /// second call for the same result (the graph is consumed; rebuild
    /// the forward pass to differentiate again).
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::contract(format!(
                "backward requires a scalar; got shape {:?}",
                self.shape()
            )));
        }
        if !self.inner.tracked {
            return Err(Error::contract(
                "backward on an untracked tensor (no grad-tracked inputs)",
            ));
        }
        if self.inner.backward_done.swap(true, Ordering::SeqCst) {
            return Err(Error::contract(
                "backward already ran for this result; the graph is consumed",
            ));
        }

        let order = self.topo_order();
        self.accumulate_grad(&[T::one()]);
        for node in order.iter().rev() {
            let grad = node
                .inner
                .grad
                .lock()
                .unwrap()
                .clone()
                .expect("reverse-topological order guarantees a populated grad");
            if let Some(op) = &node.inner.op {
                op.backward(node, &grad);
            }
        }
        Ok(())
    }

    /// Post-order over tracked nodes: parents before consumers.
    fn topo_order(&self) -> Vec<Tensor<T>> {
        let mut order = Vec::new();
        let mut visited: HashSet<usize> = HashSet::new();
        let mut stack: Vec<(Tensor<T>, bool)> = vec![(self.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
                continue;
            }
            let key = Arc::as_ptr(&node.inner) as usize;
            if !visited.insert(key) {
                continue;
            }
            stack.push((node.clone(), true));
            if let Some(op) = &node.inner.op {
                for p in op.parents() {
                    if p.inner.tracked {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }
        order
    }
}

/// Shape helper: dims of an `[N, C, H, W]` tensor.
pub(crate) fn dims4<T: Elem>(t: &Tensor<T>, what: &str) -> Result<(usize, usize, usize, usize)> {
    match t.shape() {
        [n, c, h, w] => Ok((*n, *c, *h, *w)),
        s => Err(Error::shape(format!("{what} must be rank 4, got {s:?}"))),
    }
}
