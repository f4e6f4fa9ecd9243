//! Named parameter storage and per-forward bindings.

use std::cell::RefCell;
use std::collections::BTreeMap;

use ndarray::IxDyn;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::var::{Array, Gradients, Var};
use crate::TensorError;

/// Initial value distribution for a parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Normal { std: f64 },
    Constant(f64),
}

/// Declares one named tensor a module owns.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
    /// Buffers (running statistics) are stored but never optimized.
    pub trainable: bool,
}

impl ParamSpec {
    pub fn param(name: impl Into<String>, shape: &[usize], init: Init) -> Self {
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            init,
            trainable: true,
        }
    }

    pub fn buffer(name: impl Into<String>, shape: &[usize], init: Init) -> Self {
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            init,
            trainable: false,
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Number of trainable scalars declared by `specs`.
pub fn count_trainable(specs: &[ParamSpec]) -> usize {
    specs.iter().filter(|s| s.trainable).map(ParamSpec::numel).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub value: Array,
    pub trainable: bool,
}

/// All tensors of a model, keyed by hierarchical dotted names.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: BTreeMap<String, Entry>,
}

impl ParamStore {
    /// Allocates and initializes every spec, drawing random values in spec order.
    pub fn init<R: Rng + ?Sized>(specs: &[ParamSpec], rng: &mut R) -> Result<Self, TensorError> {
        let mut entries = BTreeMap::new();
        for spec in specs {
            let value = match spec.init {
                Init::Constant(c) => Array::from_elem(IxDyn(&spec.shape), c),
                Init::Normal { std } => {
                    let dist = Normal::new(0.0, std).map_err(|_| TensorError::InvalidInit {
                        name: spec.name.clone(),
                    })?;
                    let data = (0..spec.numel()).map(|_| dist.sample(rng)).collect();
                    Array::from_shape_vec(IxDyn(&spec.shape), data).unwrap()
                }
            };
            let entry = Entry {
                value,
                trainable: spec.trainable,
            };
            if entries.insert(spec.name.clone(), entry).is_some() {
                return Err(TensorError::DuplicateName(spec.name.clone()));
            }
        }
        Ok(Self { entries })
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.get(name)
    }

    pub fn value(&self, name: &str) -> Result<&Array, TensorError> {
        self.entries
            .get(name)
            .map(|e| &e.value)
            .ok_or_else(|| TensorError::MissingName(name.to_string()))
    }

    /// Replaces a tensor's value; the shape must be unchanged.
    pub fn set(&mut self, name: &str, value: Array) -> Result<(), TensorError> {
        let entry = self
            .entries
            .get_mut(name)
            .ok_or_else(|| TensorError::MissingName(name.to_string()))?;
        if entry.value.shape() != value.shape() {
            return Err(TensorError::ShapeMismatch {
                name: name.to_string(),
                expected: entry.value.shape().to_vec(),
                found: value.shape().to_vec(),
            });
        }
        entry.value = value;
        Ok(())
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Array, TensorError> {
        self.entries
            .get_mut(name)
            .map(|e| &mut e.value)
            .ok_or_else(|| TensorError::MissingName(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Entry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_trainable(&self) -> usize {
        self.entries
            .values()
            .filter(|e| e.trainable)
            .map(|e| e.value.len())
            .sum()
    }

    /// Inserts an entry verbatim (checkpoint loading).
    pub fn insert(&mut self, name: String, entry: Entry) {
        self.entries.insert(name, entry);
    }
}

/// Binds a [`ParamStore`] for one forward pass.
///
/// Parameters become graph leaves on first use. Buffer writes made during
/// the pass (running statistics) are collected and applied afterwards with
/// [`Binding::buffer_updates`].
pub struct Binding<'s> {
    store: &'s ParamStore,
    train: bool,
    track: bool,
    leaves: RefCell<BTreeMap<String, Var>>,
    updates: RefCell<BTreeMap<String, Array>>,
}

impl<'s> Binding<'s> {
    /// Training-mode binding with gradient tracking.
    pub fn train(store: &'s ParamStore) -> Self {
        Self::new(store, true, true)
    }

    /// Inference-mode binding without gradient tracking.
    pub fn eval(store: &'s ParamStore) -> Self {
        Self::new(store, false, false)
    }

    pub fn new(store: &'s ParamStore, train: bool, track: bool) -> Self {
        Self {
            store,
            train,
            track,
            leaves: RefCell::new(BTreeMap::new()),
            updates: RefCell::new(BTreeMap::new()),
        }
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    /// The graph leaf for parameter `name`.
    ///
    /// Panics if the name was never declared; modules only ask for names
    /// they declared in their specs.
    pub fn param(&self, name: &str) -> Var {
        if let Some(v) = self.leaves.borrow().get(name) {
            return v.clone();
        }
        let entry = self
            .store
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` is not in the store"));
        let var = if self.track && entry.trainable {
            Var::parameter(entry.value.clone())
        } else {
            Var::constant(entry.value.clone())
        };
        self.leaves.borrow_mut().insert(name.to_string(), var.clone());
        var
    }

    pub fn buffer(&self, name: &str) -> Array {
        if let Some(v) = self.updates.borrow().get(name) {
            return v.clone();
        }
        self.store
            .get(name)
            .unwrap_or_else(|| panic!("buffer `{name}` is not in the store"))
            .value
            .clone()
    }

    pub fn write_buffer(&self, name: &str, value: Array) {
        self.updates.borrow_mut().insert(name.to_string(), value);
    }

    pub fn buffer_updates(&self) -> BTreeMap<String, Array> {
        self.updates.borrow().clone()
    }

    /// Gradients of every trainable parameter touched by this binding.
    /// Parameters the loss does not depend on get zero gradients.
    pub fn gradients(&self, grads: &Gradients) -> BTreeMap<String, Array> {
        leaf_gradients(&self.leaves.borrow(), grads)
    }

    /// Releases the store borrow, keeping the leaves and pending buffer
    /// writes.
    pub fn finish(self) -> (Leaves, BTreeMap<String, Array>) {
        (Leaves(self.leaves.into_inner()), self.updates.into_inner())
    }
}

fn leaf_gradients(leaves: &BTreeMap<String, Var>, grads: &Gradients) -> BTreeMap<String, Array> {
    leaves
        .iter()
        .filter(|(_, v)| v.requires_grad())
        .map(|(k, v)| (k.clone(), grads.get_or_zeros(v)))
        .collect()
}

/// Graph leaves detached from their store, see [`Binding::finish`].
#[derive(Debug, Clone, Default)]
pub struct Leaves(pub BTreeMap<String, Var>);

impl Leaves {
    pub fn gradients(&self, grads: &Gradients) -> BTreeMap<String, Array> {
        leaf_gradients(&self.0, grads)
    }
}
