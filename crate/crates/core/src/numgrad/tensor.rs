use std::cell::{Cell, RefCell};
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;

use super::real::Real;
use super::NumError;

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

/// Gradients of one op's inputs given the gradient of its output.
pub(crate) type BackwardFn<T> = Box<dyn Fn(&[T]) -> Vec<Option<Vec<T>>>>;

pub(crate) struct GradFn<T: Real> {
    pub name: &'static str,
    pub inputs: Vec<Tensor<T>>,
    pub backward: BackwardFn<T>,
}

struct Node<T: Real> {
    id: u64,
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<T>>>,
    grad_fn: Option<GradFn<T>>,
}

/// Dense row-major tensor with an optional link into the autodiff graph.
///
/// Values are immutable once built. Ops on tensors that require gradients
/// record a backward rule; ops on constants record nothing.
pub struct Tensor<T: Real = f32>(Rc<Node<T>>);

impl<T: Real> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor(Rc::clone(&self.0))
    }
}

impl<T: Real> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<_> = self.0.data.iter().take(8).collect();
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("data", &preview)
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Real> Tensor<T> {
    fn build(data: Vec<T>, shape: Vec<usize>, requires_grad: bool, grad_fn: Option<GradFn<T>>) -> Self {
        debug_assert_eq!(data.len(), numel(&shape));
        Tensor(Rc::new(Node {
            id: next_id(),
            shape,
            data,
            requires_grad,
            grad: RefCell::new(None),
            grad_fn,
        }))
    }

    /// Constant tensor. Fails when `data.len()` disagrees with `shape`.
    pub fn new(data: Vec<T>, shape: &[usize]) -> Result<Self, NumError> {
        if shape.iter().any(|&d| d == 0) {
            return Err(NumError::shape("new", format!("dims must be positive, got {shape:?}")));
        }
        if data.len() != numel(shape) {
            return Err(NumError::shape(
                "new",
                format!("{} values cannot fill shape {shape:?}", data.len()),
            ));
        }
        Ok(Self::build(data, shape.to_vec(), false, None))
    }

    /// Trainable leaf.
    pub fn param(data: Vec<T>, shape: &[usize]) -> Result<Self, NumError> {
        let t = Self::new(data, shape)?;
        Ok(t.with_grad())
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::build(vec![T::zero(); numel(shape)], shape.to_vec(), false, None)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::build(vec![T::one(); numel(shape)], shape.to_vec(), false, None)
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        Self::build(vec![v; numel(shape)], shape.to_vec(), false, None)
    }

    pub fn scalar(v: T) -> Self {
        Self::build(vec![v], vec![1], false, None)
    }

    /// Copy of this value as a fresh leaf that requires gradients.
    pub fn with_grad(&self) -> Self {
        Self::build(self.0.data.clone(), self.0.shape.clone(), true, None)
    }

    /// Copy of this value cut from the graph.
    pub fn detach(&self) -> Self {
        Self::build(self.0.data.clone(), self.0.shape.clone(), false, None)
    }

    /// Internal constructor for op outputs. Records `backward` only when an
    /// input requires gradients.
    pub(crate) fn from_op(
        data: Vec<T>,
        shape: Vec<usize>,
        name: &'static str,
        inputs: Vec<Tensor<T>>,
        backward: impl Fn(&[T]) -> Vec<Option<Vec<T>>> + 'static,
    ) -> Self {
        let track = inputs.iter().any(|t| t.requires_grad());
        let grad_fn = track.then(|| GradFn { name, inputs, backward: Box::new(backward) });
        Self::build(data, shape, track, grad_fn)
    }

    pub(crate) fn constant_unchecked(data: Vec<T>, shape: Vec<usize>) -> Self {
        Self::build(data, shape, false, None)
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.0.data.clone()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.grad_fn.is_none()
    }

    pub(crate) fn op_name(&self) -> Option<&'static str> {
        self.0.grad_fn.as_ref().map(|g| g.name)
    }

    /// Trailing dimension; rows are everything in front of it.
    pub fn cols(&self) -> usize {
        *self.0.shape.last().expect("tensors have rank >= 1")
    }

    pub fn rows(&self) -> usize {
        self.numel() / self.cols()
    }

    pub fn item(&self) -> Result<T, NumError> {
        if self.numel() != 1 {
            return Err(NumError::NotScalar(self.shape().to_vec()));
        }
        Ok(self.0.data[0])
    }

    /// Accumulated gradient of a leaf, if backward reached it.
    pub fn grad(&self) -> Option<Vec<T>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    pub fn is_finite(&self) -> bool {
        self.0.data.iter().all(|v| v.is_finite())
    }

    /// Reverse-mode sweep from a scalar loss. Leaves that require gradients
    /// accumulate `∂self/∂leaf` into their gradient buffer.
    pub fn backward(&self) -> Result<(), NumError> {
        if self.numel() != 1 {
            return Err(NumError::NotScalar(self.shape().to_vec()));
        }
        if !self.requires_grad() {
            log::warn!("backward on a detached graph: no leaf receives a gradient");
            return Ok(());
        }
        let tape = Tape::record(self);
        let mut pending: HashMap<u64, Vec<T>> = HashMap::new();
        pending.insert(self.id(), vec![T::one()]);
        for node in tape.nodes.iter().rev() {
            let Some(g) = pending.remove(&node.id()) else { continue };
            match &node.0.grad_fn {
                None => {
                    let mut slot = node.0.grad.borrow_mut();
                    match slot.as_mut() {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += *b),
                        None => *slot = Some(g),
                    }
                }
                Some(gf) => {
                    let input_grads = (gf.backward)(&g);
                    debug_assert_eq!(input_grads.len(), gf.inputs.len(), "op {}", gf.name);
                    for (input, ig) in gf.inputs.iter().zip(input_grads) {
                        let Some(ig) = ig else { continue };
                        if !input.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(ig.len(), input.numel(), "op {} gradient size", gf.name);
                        match pending.get_mut(&input.id()) {
                            Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, b)| *a += *b),
                            None => {
                                pending.insert(input.id(), ig);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Nodes of a recorded graph in topological order (inputs before outputs).
///
/// Node ids grow monotonically with construction and every op output is
/// built after its inputs, so ordering by id is a topological order.
pub struct Tape<T: Real> {
    nodes: Vec<Tensor<T>>,
}

impl<T: Real> Tape<T> {
    /// All gradient-carrying nodes reachable from `root`, each exactly once.
    pub fn record(root: &Tensor<T>) -> Self {
        let mut seen = HashSet::new();
        let mut stack = vec![root.clone()];
        let mut nodes = Vec::new();
        while let Some(t) = stack.pop() {
            if !t.requires_grad() || !seen.insert(t.id()) {
                continue;
            }
            if let Some(gf) = &t.0.grad_fn {
                stack.extend(gf.inputs.iter().cloned());
            }
            nodes.push(t);
        }
        nodes.sort_by_key(|t| t.id());
        Tape { nodes }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Op name per node (`None` for leaves), in replay order.
    pub fn op_names(&self) -> Vec<Option<&'static str>> {
        self.nodes.iter().map(|t| t.op_name()).collect()
    }

    pub fn ids(&self) -> Vec<u64> {
        self.nodes.iter().map(|t| t.id()).collect()
    }
}

/// Shared handle to a trainable tensor. Optimizers swap the underlying
/// leaf for an updated one; modules read the current value on each forward.
pub struct Param<T: Real>(Rc<RefCell<Tensor<T>>>);

impl<T: Real> Clone for Param<T> {
    fn clone(&self) -> Self {
        Param(Rc::clone(&self.0))
    }
}

impl<T: Real> fmt::Debug for Param<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.borrow().fmt(f)
    }
}

impl<T: Real> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let value = if value.requires_grad() && value.is_leaf() { value } else { value.with_grad() };
        Param(Rc::new(RefCell::new(value)))
    }

    pub fn get(&self) -> Tensor<T> {
        self.0.borrow().clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.0.borrow().shape().to_vec()
    }

    /// Replace the value. The new leaf starts without a gradient.
    pub fn set_data(&self, data: Vec<T>) -> Result<(), NumError> {
        let shape = self.shape();
        let next = Tensor::param(data, &shape)?;
        *self.0.borrow_mut() = next;
        Ok(())
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.0.borrow().grad()
    }

    pub fn zero_grad(&self) {
        self.0.borrow().zero_grad();
    }
}
