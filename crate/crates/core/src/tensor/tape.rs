use std::cell::{Cell, RefCell};
use std::collections::HashMap;

use super::{ParamId, ParamStore, Scalar, Tensor};

/// Gradient of a node's output flowing back into each of its parents.
/// `need[i]` is false for parents that do not require gradients; the
/// closure may return `None` for those.
pub type BackwardFn<T> = Box<dyn Fn(&Tensor<T>, &[bool]) -> Vec<Option<Vec<T>>>>;

struct Node<T: Scalar> {
    value: Tensor<T>,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
    requires_grad: bool,
    keep_grad: bool,
}

/// Forward matmul FLOP tallies (2 FLOPs per multiply-add).
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct FlopCount {
    /// Products against a rank-2 operand (linear layers).
    pub dense: u64,
    /// Products where both operands carry batch dims (attention scores and
    /// attention-weighted values).
    pub batched: u64,
}

impl FlopCount {
    pub fn total(&self) -> u64 {
        self.dense + self.batched
    }
}

/// Single-threaded reverse-mode tape. Every `Var` borrows the tape it was
/// recorded on; the tape (and all intermediates) is dropped after backward.
pub struct Tape<T: Scalar = f32> {
    nodes: RefCell<Vec<Node<T>>>,
    grad_enabled: bool,
    params: RefCell<HashMap<ParamId, usize>>,
    flops: Cell<FlopCount>,
}

#[derive(Clone, Copy)]
pub struct Var<'t, T: Scalar = f32> {
    pub(crate) tape: &'t Tape<T>,
    pub(crate) id: usize,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            grad_enabled: true,
            params: RefCell::new(HashMap::new()),
            flops: Cell::new(FlopCount::default()),
        }
    }

    /// A tape that records values only. Forward results are identical to a
    /// recording tape; no backward closures are kept.
    pub fn inference() -> Self {
        Self {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, node: Node<T>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Input that does not require gradients.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(Node {
            value,
            parents: Vec::new(),
            backward: None,
            requires_grad: false,
            keep_grad: false,
        })
    }

    /// Input whose gradient is reported by `backward`.
    pub fn leaf(&self, value: Tensor<T>) -> Var<'_, T> {
        let requires_grad = self.grad_enabled;
        self.push(Node {
            value,
            parents: Vec::new(),
            backward: None,
            requires_grad,
            keep_grad: requires_grad,
        })
    }

    /// Leaf for a stored parameter. Repeated calls on one tape return the
    /// same node so gradients accumulate in one place.
    pub fn param(&self, store: &ParamStore<T>, id: ParamId) -> Var<'_, T> {
        if let Some(&node) = self.params.borrow().get(&id) {
            return Var {
                tape: self,
                id: node,
            };
        }
        let var = self.leaf(store.get(id).clone());
        self.params.borrow_mut().insert(id, var.id);
        var
    }

    /// Records an op. `backward` is dropped (and the node marked constant)
    /// when recording is off or no parent requires gradients.
    pub fn op(
        &self,
        value: Tensor<T>,
        parents: &[Var<'_, T>],
        backward: impl Fn(&Tensor<T>, &[bool]) -> Vec<Option<Vec<T>>> + 'static,
    ) -> Var<'_, T> {
        let requires_grad = self.grad_enabled && {
            let nodes = self.nodes.borrow();
            parents.iter().any(|p| nodes[p.id].requires_grad)
        };
        let (parents, backward) = if requires_grad {
            (
                parents.iter().map(|p| p.id).collect(),
                Some(Box::new(backward) as BackwardFn<T>),
            )
        } else {
            (Vec::new(), None)
        };
        self.push(Node {
            value,
            parents,
            backward,
            requires_grad,
            keep_grad: false,
        })
    }

    pub(crate) fn value_of(&self, id: usize) -> Tensor<T> {
        self.nodes.borrow()[id].value.clone()
    }

    pub(crate) fn add_flops(&self, dense: u64, batched: u64) {
        let mut f = self.flops.get();
        f.dense += dense;
        f.batched += batched;
        self.flops.set(f);
    }

    pub fn flops(&self) -> FlopCount {
        self.flops.get()
    }

    /// Reverse pass from a scalar (or any-shape, seeded with ones) output.
    pub fn backward(&self, output: Var<'_, T>) -> Gradients<T> {
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Vec<T>>> = Vec::with_capacity(output.id + 1);
        grads.resize_with(output.id + 1, || None);
        let mut kept = HashMap::new();
        if nodes[output.id].requires_grad {
            grads[output.id] = Some(vec![T::one(); nodes[output.id].value.numel()]);
        }
        for i in (0..=output.id).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            let g = Tensor::from_parts(node.value.shape().to_vec(), g);
            if let Some(bw) = &node.backward {
                let need: Vec<bool> = node
                    .parents
                    .iter()
                    .map(|&p| nodes[p].requires_grad)
                    .collect();
                let pgrads = bw(&g, &need);
                debug_assert_eq!(pgrads.len(), node.parents.len());
                for ((&p, pg), needed) in node.parents.iter().zip(pgrads).zip(need) {
                    let Some(pg) = pg else { continue };
                    if !needed {
                        continue;
                    }
                    debug_assert_eq!(pg.len(), nodes[p].value.numel());
                    match &mut grads[p] {
                        Some(acc) => acc.iter_mut().zip(pg).for_each(|(a, b)| *a = *a + b),
                        slot @ None => *slot = Some(pg),
                    }
                }
            }
            if node.keep_grad {
                kept.insert(i, g);
            }
        }
        Gradients {
            kept,
            params: self.params.borrow().clone(),
        }
    }

    /// Marks an intermediate so `backward` reports its gradient.
    pub fn retain_grad(&self, var: Var<'_, T>) {
        let mut nodes = self.nodes.borrow_mut();
        let node = &mut nodes[var.id];
        node.keep_grad = node.requires_grad;
    }
}

/// Gradients produced by one reverse pass.
pub struct Gradients<T: Scalar> {
    kept: HashMap<usize, Tensor<T>>,
    params: HashMap<ParamId, usize>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a leaf or retained node; `None` if nothing flowed into it.
    pub fn wrt(&self, var: Var<'_, T>) -> Option<&Tensor<T>> {
        self.kept.get(&var.id)
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.get(&id).and_then(|n| self.kept.get(n))
    }

    /// Per-parameter gradients, indexed by `ParamId`, zero-filled where the
    /// parameter did not take part in the graph.
    pub fn into_param_grads(mut self, store: &ParamStore<T>) -> Vec<Tensor<T>> {
        store
            .iter()
            .map(|(id, entry)| {
                self.params
                    .get(&id)
                    .and_then(|n| self.kept.remove(n))
                    .unwrap_or_else(|| Tensor::zeros(entry.value.shape()))
            })
            .collect()
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn value(&self) -> Tensor<T> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Var<'t, T> {
        self.tape.constant(self.value())
    }
}
