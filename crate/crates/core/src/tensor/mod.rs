//! Dense tensors with tape-free reverse-mode differentiation.
//!
//! A [`Tensor`] is an immutable node in a computation graph. Operations
//! record their parents and a vector-Jacobian closure; [`Tensor::backward`]
//! walks the reachable graph in reverse creation order and accumulates
//! gradients into leaf tensors created with [`Tensor::param`].

mod array;
pub mod ops;

use std::cell::RefCell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

pub use array::{numel, strides, Array};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

/// Inputs handed to an operation's vector-Jacobian closure.
pub(crate) struct GradCtx<'a, T: Scalar> {
    pub grad: &'a Array<T>,
    pub out: &'a Array<T>,
    pub parents: &'a [Tensor<T>],
}

impl<T: Scalar> GradCtx<'_, T> {
    pub fn input(&self, i: usize) -> &Array<T> {
        self.parents[i].value()
    }

    pub fn wants(&self, i: usize) -> bool {
        self.parents[i].requires_grad()
    }
}

type VjpFn<T> = Box<dyn Fn(&GradCtx<'_, T>) -> Vec<Option<Array<T>>>>;

struct Backward<T: Scalar> {
    parents: Vec<Tensor<T>>,
    vjp: VjpFn<T>,
}

struct Node<T: Scalar> {
    id: u64,
    value: Array<T>,
    requires_grad: bool,
    grad: RefCell<Option<Array<T>>>,
    backward: Option<Backward<T>>,
}

/// Differentiable tensor handle. Cloning is cheap and shares the node.
pub struct Tensor<T: Scalar>(Rc<Node<T>>);

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor(Rc::clone(&self.0))
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape())
            .field("requires_grad", &self.requires_grad())
            .finish()
    }
}

impl<T: Scalar> Tensor<T> {
    fn node(value: Array<T>, requires_grad: bool, backward: Option<Backward<T>>) -> Self {
        Tensor(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            value,
            requires_grad,
            grad: RefCell::new(None),
            backward,
        }))
    }

    /// A value that never receives gradients.
    pub fn constant(value: Array<T>) -> Self {
        Self::node(value, false, None)
    }

    /// A trainable leaf that accumulates gradients on `backward`.
    pub fn param(value: Array<T>) -> Self {
        Self::node(value, true, None)
    }

    pub fn scalar(v: T) -> Self {
        Self::constant(Array::scalar(v))
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        Ok(Self::constant(Array::new(shape, data)?))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::constant(Array::zeros(shape))
    }

    /// Records an operation result. Non-finite outputs are rejected here so
    /// that no NaN or infinity propagates silently.
    pub(crate) fn from_op(
        op: &'static str,
        value: Array<T>,
        parents: Vec<Tensor<T>>,
        vjp: impl Fn(&GradCtx<'_, T>) -> Vec<Option<Array<T>>> + 'static,
    ) -> Result<Self> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op });
        }
        let requires_grad = parents.iter().any(Tensor::requires_grad);
        let backward = requires_grad.then(|| Backward {
            parents,
            vjp: Box::new(vjp),
        });
        Ok(Self::node(value, requires_grad, backward))
    }

    pub fn value(&self) -> &Array<T> {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn data(&self) -> &[T] {
        self.0.value.data()
    }

    pub fn numel(&self) -> usize {
        self.0.value.len()
    }

    pub fn ndim(&self) -> usize {
        self.shape().len()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn item(&self) -> T {
        self.0.value.item()
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self) -> Option<Array<T>> {
        self.0.grad.borrow().clone()
    }

    pub fn take_grad(&self) -> Option<Array<T>> {
        self.0.grad.borrow_mut().take()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Self {
        Self::constant(self.value().clone())
    }

    pub fn ptr_eq(&self, other: &Self) -> bool {
        Rc::ptr_eq(&self.0, &other.0)
    }

    /// Reverse-mode sweep from a scalar result.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::NonScalarBackward(self.shape().to_vec()));
        }
        if !self.requires_grad() {
            return Ok(());
        }

        // Parents are always created before children, so descending id order
        // is a valid reverse topological order.
        let mut order = Vec::new();
        let mut seen = HashSet::new();
        let mut stack = vec![self.clone()];
        while let Some(t) = stack.pop() {
            if !seen.insert(t.0.id) {
                continue;
            }
            if let Some(bw) = &t.0.backward {
                stack.extend(bw.parents.iter().filter(|p| p.requires_grad()).cloned());
            }
            order.push(t);
        }
        order.sort_by(|a, b| b.0.id.cmp(&a.0.id));

        let mut grads: HashMap<u64, Array<T>> = HashMap::new();
        grads.insert(self.0.id, Array::full(self.shape(), T::one()));

        for t in &order {
            let Some(g) = grads.remove(&t.0.id) else { continue };
            match &t.0.backward {
                None => {
                    let mut slot = t.0.grad.borrow_mut();
                    match slot.as_mut() {
                        Some(acc) => acc.add_assign(&g),
                        None => *slot = Some(g),
                    }
                }
                Some(bw) => {
                    let ctx = GradCtx {
                        grad: &g,
                        out: &t.0.value,
                        parents: &bw.parents,
                    };
                    let pgrads = (bw.vjp)(&ctx);
                    debug_assert_eq!(pgrads.len(), bw.parents.len());
                    for (p, pg) in bw.parents.iter().zip(pgrads) {
                        let Some(pg) = pg else { continue };
                        if !p.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(pg.shape(), p.shape(), "gradient shape");
                        match grads.get_mut(&p.0.id) {
                            Some(acc) => acc.add_assign(&pg),
                            None => {
                                grads.insert(p.0.id, pg);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}
