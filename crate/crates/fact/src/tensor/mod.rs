//! Dense f32 tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is a shared handle (`Rc`) to a dense row-major f32 buffer.
//! Operations build a backward graph on the fly: every result produced while
//! gradients are enabled records its operation and parent handles, and
//! [`Tensor::backward`] walks that graph in reverse topological order,
//! accumulating gradients into every `requires_grad` leaf.
//!
//! The graph is acyclic by construction (ops always allocate fresh outputs)
//! and is torn down when the last handle to the loss is dropped. Leaves
//! (parameters, inputs) survive across steps; gradients accumulate until
//! [`Tensor::zero_grad`] is called.

mod ops;

pub mod gradcheck;

pub(crate) use ops::{matmul_raw, mode_product_raw};

use std::cell::{Cell, Ref, RefCell};
use std::collections::{HashMap, HashSet};
use std::rc::Rc;

use crate::error::{Error, Result};

use ops::{Node, Op};

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` with gradient recording disabled on this thread.
///
/// Forward passes inside the closure build no backward graph, which makes
/// evaluation loops cheaper. Recording is restored even if `f` panics.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(GRAD_ENABLED.with(|g| g.replace(false)));
    f()
}

pub(crate) fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

pub(crate) struct Inner {
    pub(crate) shape: Vec<usize>,
    pub(crate) data: Vec<f32>,
    pub(crate) requires_grad: bool,
    pub(crate) grad: Option<Vec<f32>>,
    pub(crate) node: Option<Node>,
}

/// Shared handle to a dense f32 tensor participating in autodiff.
///
/// `clone` is cheap and aliases the same storage; use [`Tensor::deep_clone`]
/// for an independent copy.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<RefCell<Inner>>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let inner = self.inner.borrow();
        f.debug_struct("Tensor")
            .field("shape", &inner.shape)
            .field("requires_grad", &inner.requires_grad)
            .field("leaf", &inner.node.is_none())
            .finish()
    }
}

fn checked_len(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::Config("tensor shape must have at least one dimension".into()));
    }
    let mut len = 1usize;
    for &dim in shape {
        if dim == 0 {
            return Err(Error::Config(format!("tensor shape {shape:?} has a zero dimension")));
        }
        len = len
            .checked_mul(dim)
            .ok_or_else(|| Error::Config(format!("tensor shape {shape:?} overflows usize")))?;
    }
    Ok(len)
}

impl Tensor {
    pub(crate) fn new_internal(
        shape: Vec<usize>,
        data: Vec<f32>,
        requires_grad: bool,
        node: Option<Node>,
    ) -> Tensor {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            inner: Rc::new(RefCell::new(Inner {
                shape,
                data,
                requires_grad,
                grad: None,
                node,
            })),
        }
    }

    /// Leaf tensor from a flat row-major buffer.
    pub fn from_vec(shape: &[usize], data: Vec<f32>) -> Result<Tensor> {
        let expected = checked_len(shape)?;
        if expected != data.len() {
            return Err(Error::Config(format!(
                "shape {shape:?} implies {expected} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor::new_internal(shape.to_vec(), data, false, None))
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        let len = checked_len(shape).expect("valid shape");
        Tensor::new_internal(shape.to_vec(), vec![0.0; len], false, None)
    }

    pub fn full(shape: &[usize], value: f32) -> Tensor {
        let len = checked_len(shape).expect("valid shape");
        Tensor::new_internal(shape.to_vec(), vec![value; len], false, None)
    }

    pub fn scalar(value: f32) -> Tensor {
        Tensor::new_internal(vec![1], vec![value], false, None)
    }

    /// d×d identity matrix.
    pub fn eye(d: usize) -> Tensor {
        let mut data = vec![0.0; d * d];
        for i in 0..d {
            data[i * d + i] = 1.0;
        }
        Tensor::new_internal(vec![d, d], data, false, None)
    }

    /// Marks this leaf as trainable and returns the same handle.
    pub fn with_grad(self) -> Tensor {
        self.set_requires_grad(true);
        self
    }

    /// Toggles gradient tracking on a leaf.
    pub fn set_requires_grad(&self, yes: bool) {
        let mut inner = self.inner.borrow_mut();
        debug_assert!(inner.node.is_none(), "requires_grad is a leaf property");
        inner.requires_grad = yes;
        if !yes {
            inner.grad = None;
        }
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.borrow().requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.inner.borrow().node.is_none()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.inner.borrow().shape.clone()
    }

    pub fn ndim(&self) -> usize {
        self.inner.borrow().shape.len()
    }

    pub fn numel(&self) -> usize {
        self.inner.borrow().data.len()
    }

    /// Borrow of the flat row-major data.
    pub fn data(&self) -> Ref<'_, [f32]> {
        Ref::map(self.inner.borrow(), |i| i.data.as_slice())
    }

    pub fn to_vec(&self) -> Vec<f32> {
        self.inner.borrow().data.clone()
    }

    /// Value of a single-element tensor. Panics on anything larger.
    pub fn item(&self) -> f32 {
        let inner = self.inner.borrow();
        assert_eq!(inner.data.len(), 1, "item() requires a scalar, got {:?}", inner.shape);
        inner.data[0]
    }

    pub fn get(&self, idx: usize) -> f32 {
        self.inner.borrow().data[idx]
    }

    /// Writes one element in place. Only meaningful on leaves.
    pub fn set(&self, idx: usize, value: f32) {
        self.inner.borrow_mut().data[idx] = value;
    }

    /// Mutates the underlying buffer in place (optimizer updates). The length
    /// must not change.
    pub fn map_data(&self, f: impl FnOnce(&mut [f32])) {
        let mut inner = self.inner.borrow_mut();
        let len = inner.data.len();
        f(&mut inner.data);
        debug_assert_eq!(inner.data.len(), len);
    }

    pub fn set_data(&self, values: &[f32]) -> Result<()> {
        let mut inner = self.inner.borrow_mut();
        if values.len() != inner.data.len() {
            return Err(Error::Config(format!(
                "set_data: expected {} values, got {}",
                inner.data.len(),
                values.len()
            )));
        }
        inner.data.copy_from_slice(values);
        Ok(())
    }

    /// Accumulated gradient, if any.
    pub fn grad(&self) -> Option<Vec<f32>> {
        self.inner.borrow().grad.clone()
    }

    pub fn zero_grad(&self) {
        self.inner.borrow_mut().grad = None;
    }

    /// Independent leaf copy of the current values (no graph, no grad).
    pub fn deep_clone(&self) -> Tensor {
        let inner = self.inner.borrow();
        Tensor::new_internal(inner.shape.clone(), inner.data.clone(), false, None)
    }

    /// Same data as a graph-detached leaf.
    pub fn detach(&self) -> Tensor {
        self.deep_clone()
    }

    /// True when two handles alias the same storage.
    pub fn same_storage(&self, other: &Tensor) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    fn key(&self) -> *const RefCell<Inner> {
        Rc::as_ptr(&self.inner)
    }

    /// Reverse-mode sweep from a scalar loss.
    ///
    /// Populates (accumulates into) `grad` on every `requires_grad` leaf that
    /// the loss depends on. Repeated calls accumulate until [`Tensor::zero_grad`].
    /// A graph whose leaves are all frozen is a no-op.
    pub fn backward(&self) -> Result<()> {
        {
            let inner = self.inner.borrow();
            if inner.data.len() != 1 {
                return Err(Error::NonScalarLoss {
                    shape: inner.shape.clone(),
                });
            }
        }
        if !self.requires_grad() {
            return Ok(());
        }

        let order = self.topo_order();
        let mut grads: HashMap<*const RefCell<Inner>, Vec<f32>> = HashMap::new();
        grads.insert(self.key(), vec![1.0]);

        for t in order.iter().rev() {
            let Some(grad_out) = grads.remove(&t.key()) else {
                continue;
            };
            let inner = t.inner.borrow();
            match &inner.node {
                None => {
                    if inner.requires_grad {
                        drop(inner);
                        let mut inner = t.inner.borrow_mut();
                        match &mut inner.grad {
                            Some(acc) => {
                                for (a, g) in acc.iter_mut().zip(&grad_out) {
                                    *a += g;
                                }
                            }
                            None => inner.grad = Some(grad_out),
                        }
                    }
                }
                Some(node) => {
                    let contributions = node.op.backward(&grad_out, &inner, &node.parents);
                    for (parent, contribution) in node.parents.iter().zip(contributions) {
                        let Some(c) = contribution else { continue };
                        match grads.get_mut(&parent.key()) {
                            Some(acc) => {
                                for (a, g) in acc.iter_mut().zip(&c) {
                                    *a += g;
                                }
                            }
                            None => {
                                grads.insert(parent.key(), c);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Iterative post-order DFS over the grad-requiring subgraph; parents
    /// appear before the tensors computed from them.
    fn topo_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut visited: HashSet<*const RefCell<Inner>> = HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.key()) {
                continue;
            }
            stack.push((t.clone(), true));
            let inner = t.inner.borrow();
            if let Some(node) = &inner.node {
                for p in &node.parents {
                    if p.requires_grad() && !visited.contains(&p.key()) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }
        order
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_rejects_length_mismatch() {
        let err = Tensor::from_vec(&[2, 3], vec![1.0; 5]).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn from_vec_rejects_zero_dim() {
        assert!(Tensor::from_vec(&[2, 0], vec![]).is_err());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let t = Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap().with_grad();
        let s = t.scale(2.0).unwrap();
        let err = s.backward().unwrap_err();
        assert!(matches!(err, Error::NonScalarLoss { .. }));
    }

    #[test]
    fn sum_of_leaf_gives_ones() {
        let w = Tensor::from_vec(&[2, 3], vec![1.0, -2.0, 0.5, 3.0, 4.0, -1.0])
            .unwrap()
            .with_grad();
        let loss = w.sum_all().unwrap();
        loss.backward().unwrap();
        assert_eq!(w.grad().unwrap(), vec![1.0; 6]);
    }

    #[test]
    fn grads_accumulate_until_zeroed() {
        let w = Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap().with_grad();
        let loss = w.sum_all().unwrap();
        loss.backward().unwrap();
        loss.backward().unwrap();
        assert_eq!(w.grad().unwrap(), vec![2.0, 2.0]);
        w.zero_grad();
        assert!(w.grad().is_none());
    }

    #[test]
    fn frozen_leaves_get_no_grad() {
        let frozen = Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        let live = Tensor::from_vec(&[2], vec![3.0, 4.0]).unwrap().with_grad();
        let loss = frozen.add(&live).unwrap().sum_all().unwrap();
        loss.backward().unwrap();
        assert!(frozen.grad().is_none());
        assert_eq!(live.grad().unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn all_frozen_graph_is_a_noop() {
        let a = Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        let loss = a.scale(3.0).unwrap().sum_all().unwrap();
        loss.backward().unwrap();
        assert!(a.grad().is_none());
    }

    #[test]
    fn no_grad_suppresses_graph() {
        let w = Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap().with_grad();
        let out = no_grad(|| w.scale(2.0).unwrap());
        assert!(out.is_leaf());
        assert!(!out.requires_grad());
    }

    #[test]
    fn shared_leaf_used_twice_accumulates_both_paths() {
        // loss = sum(x + x) => dx = 2
        let x = Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap().with_grad();
        let loss = x.add(&x).unwrap().sum_all().unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 2.0, 2.0]);
    }
}
