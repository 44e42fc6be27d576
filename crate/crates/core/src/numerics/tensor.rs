//! Dense row-major `f64` tensors with a dynamically recorded computation graph.
//!
//! Every primitive in [`super::ops`] produces a new [`Tensor`]; when any input
//! requires a gradient the output keeps references to its inputs together with
//! a closure computing vector-Jacobian products. [`Tensor::backward`] walks the
//! recorded graph in reverse topological order.

use std::cell::{Cell, Ref, RefCell};
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};

/// Vector-Jacobian product of one primitive: receives the output gradient and
/// a mask of which parents need a gradient, returns one entry per parent.
pub(crate) type VjpFn = Box<dyn Fn(&[f64], &[bool]) -> Vec<Option<Vec<f64>>>>;

struct GradFn {
    op: &'static str,
    parents: Vec<Tensor>,
    vjp: VjpFn,
}

struct Node {
    shape: Vec<usize>,
    data: RefCell<Vec<f64>>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f64>>>,
    grad_fn: Option<GradFn>,
}

#[derive(Clone)]
pub struct Tensor(Rc<Node>);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` without recording any computation graph.
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

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn leaf(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Result<Self> {
        if numel(&shape) != data.len() {
            return Err(Error::invalid(
                "tensor",
                format!(
                    "shape {:?} holds {} values but {} were given",
                    shape,
                    numel(&shape),
                    data.len()
                ),
            ));
        }
        Ok(Tensor(Rc::new(Node {
            shape,
            data: RefCell::new(data),
            requires_grad,
            grad: RefCell::new(None),
            grad_fn: None,
        })))
    }

    /// A constant tensor (never receives a gradient).
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        Self::leaf(shape.to_vec(), data, false)
    }

    /// A learnable leaf tensor.
    pub fn param(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        Self::leaf(shape.to_vec(), data, true)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::leaf(shape.to_vec(), vec![0.0; numel(shape)], false).expect("consistent shape")
    }

    pub fn scalar(value: f64) -> Self {
        Self::leaf(vec![1], vec![value], false).expect("consistent shape")
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("from_rows", "ragged rows"));
        }
        let data = rows.iter().flatten().copied().collect();
        Self::new(&[rows.len(), cols], data)
    }

    pub fn eye(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self::new(&[n, n], data).expect("consistent shape")
    }

    /// Records a primitive's output. The graph edge is stored only when
    /// gradients are enabled and some parent requires a gradient.
    pub(crate) fn from_op(
        op: &'static str,
        shape: Vec<usize>,
        data: Vec<f64>,
        parents: Vec<Tensor>,
        vjp: VjpFn,
    ) -> Tensor {
        debug_assert_eq!(numel(&shape), data.len(), "{op} produced inconsistent data");
        let track = grad_enabled() && parents.iter().any(Tensor::requires_grad);
        Tensor(Rc::new(Node {
            shape,
            data: RefCell::new(data),
            requires_grad: track,
            grad: RefCell::new(None),
            grad_fn: track.then(|| GradFn { op, parents, vjp }),
        }))
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        numel(&self.0.shape)
    }

    pub fn data(&self) -> Ref<'_, Vec<f64>> {
        self.0.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.borrow().clone()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.0.data.borrow()[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.grad_fn.is_none()
    }

    /// Name of the primitive that produced this tensor, if recorded.
    pub fn op_name(&self) -> Option<&'static str> {
        self.0.grad_fn.as_ref().map(|g| g.op)
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Overwrites the values in place. Used by optimizers and checkpoint loading.
    pub fn set_data(&self, values: &[f64]) -> Result<()> {
        let mut data = self.0.data.borrow_mut();
        if data.len() != values.len() {
            return Err(Error::shape("set_data", &self.0.shape, &[values.len()]));
        }
        data.copy_from_slice(values);
        Ok(())
    }

    pub(crate) fn update_data(&self, f: impl FnOnce(&mut [f64])) {
        f(&mut self.0.data.borrow_mut());
    }

    /// A constant copy sharing nothing with the graph.
    pub fn detach(&self) -> Tensor {
        Tensor::new(self.shape(), self.to_vec()).expect("consistent shape")
    }

    pub fn ptr_eq(&self, other: &Tensor) -> bool {
        Rc::ptr_eq(&self.0, &other.0)
    }

    fn key(&self) -> *const Node {
        Rc::as_ptr(&self.0)
    }

    /// Reverse-mode differentiation from a one-element tensor. Gradients are
    /// added onto any existing `grad` buffers.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::NonScalarLoss(self.shape().to_vec()));
        }
        if !self.requires_grad() {
            return Ok(());
        }

        // Iterative post-order DFS gives a topological order.
        let mut order: Vec<Tensor> = Vec::new();
        let mut visited: HashSet<*const Node> = HashSet::new();
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
            if let Some(gf) = &t.0.grad_fn {
                for p in &gf.parents {
                    if p.requires_grad() && !visited.contains(&p.key()) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }

        let mut pending: HashMap<*const Node, Vec<f64>> = HashMap::new();
        pending.insert(self.key(), vec![1.0]);
        for t in order.iter().rev() {
            let Some(g) = pending.remove(&t.key()) else {
                continue;
            };
            if let Some(gf) = &t.0.grad_fn {
                let needs: Vec<bool> = gf.parents.iter().map(Tensor::requires_grad).collect();
                let parent_grads = (gf.vjp)(&g, &needs);
                debug_assert_eq!(parent_grads.len(), gf.parents.len());
                for ((p, pg), need) in gf.parents.iter().zip(parent_grads).zip(needs) {
                    let Some(pg) = pg else { continue };
                    if !need {
                        continue;
                    }
                    debug_assert_eq!(pg.len(), p.numel(), "{} gradient size", gf.op);
                    match pending.get_mut(&p.key()) {
                        Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                        None => {
                            pending.insert(p.key(), pg);
                        }
                    }
                }
            }
            let mut slot = t.0.grad.borrow_mut();
            match slot.as_mut() {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                None => *slot = Some(g),
            }
        }
        Ok(())
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let data = self.data();
        let preview: Vec<f64> = data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape())
            .field("data", &preview)
            .field("requires_grad", &self.requires_grad())
            .finish()
    }
}
