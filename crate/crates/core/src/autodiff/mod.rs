//! Dense tensors with reverse-mode automatic differentiation.
//!
//! Every differentiable op records a closure that maps the output gradient to
//! its parents' gradients. The record lives as long as the output tensor, so
//! the graph of one forward pass is released when the loss is dropped.
//! [`Tensor::backward`] walks the graph in reverse topological order and adds
//! the result into the `grad` buffer of each leaf that requires it.

mod conv;
mod loss;
mod norm;
mod ops;
mod param;

pub use loss::softmax_rows;
pub use param::Parameter;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use std::cell::{Ref, RefCell, RefMut};
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

type BackwardFn<T> = Box<dyn Fn(&[T], &[bool]) -> Vec<Option<Vec<T>>>>;

struct GradFn<T: Scalar> {
    parents: Vec<Tensor<T>>,
    backward: BackwardFn<T>,
}

struct Node<T: Scalar> {
    shape: Vec<usize>,
    data: RefCell<Vec<T>>,
    grad: RefCell<Option<Vec<T>>>,
    requires_grad: bool,
    grad_fn: Option<GradFn<T>>,
}

/// Handle to a node of the computation graph. Cloning is cheap and shares data.
pub struct Tensor<T: Scalar>(Rc<Node<T>>);

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor(Rc::clone(&self.0))
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Scalar> Tensor<T> {
    fn build(shape: Vec<usize>, data: Vec<T>, requires_grad: bool, grad_fn: Option<GradFn<T>>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        let grad = if requires_grad && grad_fn.is_none() {
            Some(vec![T::zero(); data.len()])
        } else {
            None
        };
        Tensor(Rc::new(Node {
            shape,
            data: RefCell::new(data),
            grad: RefCell::new(grad),
            requires_grad,
            grad_fn,
        }))
    }

    /// Constant tensor; fails if `data` does not fill `shape`.
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(Error::Dimension {
                op: "new",
                lhs: shape.to_vec(),
                rhs: vec![data.len()],
            });
        }
        Ok(Self::build(shape.to_vec(), data, false, None))
    }

    /// Trainable leaf with a zeroed gradient buffer.
    pub fn leaf(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let t = Self::new(shape, data)?;
        Ok(Self::build(t.0.shape.clone(), t.to_vec(), true, None))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::build(shape.to_vec(), vec![T::zero(); numel(shape)], false, None)
    }

    pub fn scalar(v: T) -> Self {
        Self::build(Vec::new(), vec![v], false, None)
    }

    /// Output of an op. The backward closure is kept only if some parent
    /// takes part in differentiation.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<T>,
        parents: &[&Tensor<T>],
        backward: impl Fn(&[T], &[bool]) -> Vec<Option<Vec<T>>> + 'static,
    ) -> Self {
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        let grad_fn = requires_grad.then(|| GradFn {
            parents: parents.iter().map(|&p| p.clone()).collect(),
            backward: Box::new(backward),
        });
        Self::build(shape, data, requires_grad, grad_fn)
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn numel(&self) -> usize {
        self.0.data.borrow().len()
    }

    pub fn data(&self) -> Ref<'_, Vec<T>> {
        self.0.data.borrow()
    }

    /// Mutable view of the values. Only leaves are ever written after creation.
    pub fn data_mut(&self) -> RefMut<'_, Vec<T>> {
        self.0.data.borrow_mut()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.0.data.borrow().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        let d = self.0.data.borrow();
        assert_eq!(d.len(), 1, "item() on tensor of shape {:?}", self.0.shape);
        d[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.grad_fn.is_none()
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        if let Some(g) = self.0.grad.borrow_mut().as_mut() {
            g.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    /// Copy of the values with no history.
    pub fn detach(&self) -> Self {
        Self::build(self.0.shape.clone(), self.to_vec(), false, None)
    }

    /// Backpropagates from a single-element tensor into every reachable leaf.
    /// Gradients accumulate; calling twice doubles them.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Usage(format!(
                "backward() needs a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Err(Error::Usage("backward() on a tensor that is not connected to any parameter".into()));
        }

        let order = self.topological_order();
        let mut grads: HashMap<*const Node<T>, Vec<T>> = HashMap::new();
        grads.insert(Rc::as_ptr(&self.0), vec![T::one()]);

        for node in order.iter().rev() {
            let key = Rc::as_ptr(&node.0);
            let Some(out_grad) = grads.remove(&key) else {
                continue;
            };
            match &node.0.grad_fn {
                None => node.accumulate(&out_grad),
                Some(f) => {
                    let needs: Vec<bool> = f.parents.iter().map(|p| p.requires_grad()).collect();
                    let parent_grads = (f.backward)(&out_grad, &needs);
                    for ((parent, g), need) in f.parents.iter().zip(parent_grads).zip(&needs) {
                        let (Some(g), true) = (g, *need) else { continue };
                        debug_assert_eq!(g.len(), parent.numel());
                        match grads.entry(Rc::as_ptr(&parent.0)) {
                            std::collections::hash_map::Entry::Occupied(mut e) => {
                                e.get_mut().iter_mut().zip(&g).for_each(|(a, b)| *a += *b);
                            }
                            std::collections::hash_map::Entry::Vacant(e) => {
                                e.insert(g);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn accumulate(&self, g: &[T]) {
        let mut slot = self.0.grad.borrow_mut();
        let buf = slot.get_or_insert_with(|| vec![T::zero(); g.len()]);
        buf.iter_mut().zip(g).for_each(|(a, b)| *a += *b);
    }

    /// Nodes that require grad, parents before children.
    fn topological_order(&self) -> Vec<Tensor<T>> {
        let mut order = Vec::new();
        let mut seen = std::collections::HashSet::new();
        let mut stack: Vec<(Tensor<T>, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            let key = Rc::as_ptr(&t.0);
            if expanded {
                order.push(t);
                continue;
            }
            if !seen.insert(key) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(f) = &t.0.grad_fn {
                for p in f.parents.iter().filter(|p| p.requires_grad()) {
                    if !seen.contains(&Rc::as_ptr(&p.0)) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }
        order
    }
}
