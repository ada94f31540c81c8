use std::cell::Cell;
use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock, RwLockReadGuard, RwLockWriteGuard};

use super::Element;
use crate::error::{Error, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` without recording any backward graph on this thread.
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

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Computes parent gradients from the output gradient. The mask says
/// which parents actually need one; entries for the others may be `None`.
pub(crate) type BackwardFn<T> = Box<dyn Fn(&[T], &[bool]) -> Vec<Option<Vec<T>>> + Send + Sync>;

struct GradFn<T: Element> {
    parents: Vec<Tensor<T>>,
    backward: BackwardFn<T>,
}

struct Node<T: Element> {
    id: u64,
    shape: Vec<usize>,
    data: RwLock<Vec<T>>,
    grad: Mutex<Option<Vec<T>>>,
    requires_grad: bool,
    grad_fn: Option<GradFn<T>>,
}

/// N-dimensional row-major array that can take part in a reverse-mode
/// gradient graph. Cloning is cheap and shares the underlying node.
pub struct Tensor<T: Element = f32> {
    node: Arc<Node<T>>,
}

impl<T: Element> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            node: Arc::clone(&self.node),
        }
    }
}

impl<T: Element> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.node.shape)
            .field("requires_grad", &self.node.requires_grad)
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Element> Tensor<T> {
    fn build(data: Vec<T>, shape: Vec<usize>, requires_grad: bool, grad_fn: Option<GradFn<T>>) -> Self {
        debug_assert_eq!(data.len(), numel(&shape));
        Tensor {
            node: Arc::new(Node {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data: RwLock::new(data),
                grad: Mutex::new(None),
                requires_grad,
                grad_fn,
            }),
        }
    }

    /// Constant tensor (no gradient).
    pub fn from_vec(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        if data.len() != numel(shape) {
            return Err(Error::shape("from_vec", &[data.len()], shape));
        }
        Ok(Self::build(data, shape.to_vec(), false, None))
    }

    /// Trainable leaf; gradients accumulate into it on `backward`.
    pub fn parameter(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        if data.len() != numel(shape) {
            return Err(Error::shape("parameter", &[data.len()], shape));
        }
        let t = Self::build(data, shape.to_vec(), true, None);
        *t.node.grad.lock().unwrap() = Some(vec![T::zero(); numel(shape)]);
        Ok(t)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::build(vec![T::zero(); numel(shape)], shape.to_vec(), false, None)
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self::build(vec![value; numel(shape)], shape.to_vec(), false, None)
    }

    pub fn scalar(value: T) -> Self {
        Self::build(vec![value], vec![], false, None)
    }

    /// Result of a differentiable op. Records the backward closure only when
    /// grad mode is on and some parent needs a gradient.
    pub(crate) fn from_op<F>(data: Vec<T>, shape: Vec<usize>, parents: &[&Tensor<T>], backward: F) -> Self
    where
        F: Fn(&[T], &[bool]) -> Vec<Option<Vec<T>>> + Send + Sync + 'static,
    {
        let needs = grad_enabled() && parents.iter().any(|p| p.requires_grad());
        if needs {
            let grad_fn = GradFn {
                parents: parents.iter().map(|p| (*p).clone()).collect(),
                backward: Box::new(backward),
            };
            Self::build(data, shape, true, Some(grad_fn))
        } else {
            Self::build(data, shape, false, None)
        }
    }

    pub fn id(&self) -> u64 {
        self.node.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn ndim(&self) -> usize {
        self.node.shape.len()
    }

    pub fn numel(&self) -> usize {
        numel(&self.node.shape)
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.node.grad_fn.is_none()
    }

    pub fn data(&self) -> RwLockReadGuard<'_, Vec<T>> {
        self.node.data.read().unwrap()
    }

    /// Mutable access to the values. Meant for optimizer updates and
    /// checkpoint loading on leaves; mutating an interior node invalidates
    /// any graph that saved it.
    pub fn data_mut(&self) -> RwLockWriteGuard<'_, Vec<T>> {
        self.node.data.write().unwrap()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.data().clone()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> T {
        let d = self.data();
        assert_eq!(d.len(), 1, "item() on tensor of shape {:?}", self.shape());
        d[0]
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.node.grad.lock().unwrap().clone()
    }

    /// Runs `f` on the gradient buffer without copying it.
    pub fn with_grad<R>(&self, f: impl FnOnce(Option<&[T]>) -> R) -> R {
        let g = self.node.grad.lock().unwrap();
        f(g.as_deref())
    }

    pub fn zero_grad(&self) {
        if let Some(g) = self.node.grad.lock().unwrap().as_mut() {
            g.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    /// Same values, cut off from the graph.
    pub fn detach(&self) -> Self {
        Self::build(self.to_vec(), self.shape().to_vec(), false, None)
    }

    /// Reverse-mode sweep from a one-element tensor. Leaf gradients are
    /// accumulated, so calling twice without `zero_grad` adds up.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::shape("backward (expects a scalar)", self.shape(), &[1]));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = self.topo_order();
        let mut pending: HashMap<u64, Vec<T>> = HashMap::new();
        self.accumulate(&mut pending, vec![T::one()]);

        for t in order.iter().rev() {
            let Some(grad_fn) = t.node.grad_fn.as_ref() else {
                continue;
            };
            let Some(g_out) = pending.remove(&t.id()) else {
                continue;
            };
            let mask: Vec<bool> = grad_fn.parents.iter().map(|p| p.requires_grad()).collect();
            let grads = (grad_fn.backward)(&g_out, &mask);
            debug_assert_eq!(grads.len(), grad_fn.parents.len());
            for ((parent, g), needed) in grad_fn.parents.iter().zip(grads).zip(mask) {
                if let (true, Some(g)) = (needed, g) {
                    debug_assert_eq!(g.len(), parent.numel());
                    parent.accumulate(&mut pending, g);
                }
            }
        }
        Ok(())
    }

    fn accumulate(&self, pending: &mut HashMap<u64, Vec<T>>, g: Vec<T>) {
        if self.is_leaf() {
            let mut slot = self.node.grad.lock().unwrap();
            match slot.as_mut() {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += *b),
                None => *slot = Some(g),
            }
        } else {
            match pending.get_mut(&self.id()) {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += *b),
                None => {
                    pending.insert(self.id(), g);
                }
            }
        }
    }

    /// Nodes reachable from `self` that require gradients, parents before
    /// children.
    fn topo_order(&self) -> Vec<Tensor<T>> {
        let mut order = Vec::new();
        let mut visited = std::collections::HashSet::new();
        // (tensor, children_pushed)
        let mut stack = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.id()) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(gf) = t.node.grad_fn.as_ref() {
                for p in &gf.parents {
                    if p.requires_grad() && !visited.contains(&p.id()) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }
        order
    }
}
