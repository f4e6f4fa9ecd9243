//! Graph nodes and reverse-mode differentiation.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicUsize, Ordering};

use ndarray::{ArrayD, IxDyn};

/// Dense f64 array, NCHW for image tensors.
pub type Array = ArrayD<f64>;

static NEXT_ID: AtomicUsize = AtomicUsize::new(0);

/// Computes parent gradients from the output gradient. Only parents flagged
/// in `needs` have to be returned as `Some`.
pub(crate) type BackwardFn = Box<dyn Fn(&Array, &[bool]) -> Vec<Option<Array>>>;

struct Node {
    id: usize,
    value: Array,
    requires_grad: bool,
    parents: Vec<Var>,
    backward: Option<BackwardFn>,
}

/// A value in a computation graph. Cloning is cheap (reference counted).
#[derive(Clone)]
pub struct Var(Rc<Node>);

impl fmt::Debug for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.0.id)
            .field("shape", &self.shape())
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

impl Var {
    fn new_node(
        value: Array,
        requires_grad: bool,
        parents: Vec<Var>,
        backward: Option<BackwardFn>,
    ) -> Self {
        Var(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            value,
            requires_grad,
            parents,
            backward,
        }))
    }

    /// A leaf that gradients are tracked for.
    pub fn parameter(value: Array) -> Self {
        Self::new_node(value, true, Vec::new(), None)
    }

    /// A leaf without gradient tracking.
    pub fn constant(value: Array) -> Self {
        Self::new_node(value, false, Vec::new(), None)
    }

    pub fn scalar(value: f64) -> Self {
        Self::constant(Array::from_elem(IxDyn(&[]), value))
    }

    /// Builds an interior node. Parents that do not require gradients are
    /// kept for bookkeeping only; if none do, the backward closure is dropped.
    pub(crate) fn from_op(value: Array, parents: Vec<Var>, backward: BackwardFn) -> Self {
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        if requires_grad {
            Self::new_node(value, true, parents, Some(backward))
        } else {
            Self::new_node(value, false, Vec::new(), None)
        }
    }

    pub fn id(&self) -> usize {
        self.0.id
    }

    pub fn value(&self) -> &Array {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Self {
        Self::constant(self.0.value.clone())
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(
            self.0.value.len(),
            1,
            "item() on tensor of shape {:?}",
            self.shape()
        );
        *self.0.value.iter().next().unwrap()
    }

    /// Reverse-mode gradients of this scalar with respect to every node in
    /// its graph that requires gradients.
    pub fn backward(&self) -> Gradients {
        assert_eq!(
            self.0.value.len(),
            1,
            "backward() needs a scalar, got shape {:?}",
            self.shape()
        );
        let mut grads: HashMap<usize, Array> = HashMap::new();
        if !self.requires_grad() {
            return Gradients { grads };
        }
        let order = self.topological_order();
        grads.insert(self.id(), Array::ones(self.0.value.raw_dim()));
        for node in order.iter().rev() {
            let Some(backward) = node.0.backward.as_ref() else {
                continue;
            };
            let Some(gout) = grads.get(&node.id()) else {
                continue;
            };
            let needs: Vec<bool> = node.0.parents.iter().map(|p| p.requires_grad()).collect();
            let parent_grads = backward(gout, &needs);
            debug_assert_eq!(parent_grads.len(), node.0.parents.len());
            for (parent, g) in node.0.parents.iter().zip(parent_grads) {
                let Some(g) = g else { continue };
                if !parent.requires_grad() {
                    continue;
                }
                assert_eq!(
                    g.shape(),
                    parent.shape(),
                    "gradient shape mismatch in backward pass"
                );
                match grads.get_mut(&parent.id()) {
                    Some(acc) => *acc += &g,
                    None => {
                        grads.insert(parent.id(), g);
                    }
                }
            }
        }
        Gradients { grads }
    }

    /// Post-order over the nodes requiring gradients, parents first.
    fn topological_order(&self) -> Vec<Var> {
        let mut order = Vec::new();
        let mut visited = HashSet::new();
        let mut stack: Vec<(Var, bool)> = vec![(self.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
                continue;
            }
            if !visited.insert(node.id()) {
                continue;
            }
            stack.push((node.clone(), true));
            for parent in node.0.parents.iter().rev() {
                if parent.requires_grad() && !visited.contains(&parent.id()) {
                    stack.push((parent.clone(), false));
                }
            }
        }
        order
    }
}

/// Gradient table produced by [`Var::backward`].
#[derive(Debug, Default)]
pub struct Gradients {
    grads: HashMap<usize, Array>,
}

impl Gradients {
    pub fn get(&self, var: &Var) -> Option<&Array> {
        self.grads.get(&var.id())
    }

    /// Gradient of `var`, or zeros shaped like it when the loss does not
    /// depend on it.
    pub fn get_or_zeros(&self, var: &Var) -> Array {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Array::zeros(var.value().raw_dim()))
    }
}
