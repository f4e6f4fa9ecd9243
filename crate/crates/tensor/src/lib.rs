//! A small reverse-mode automatic differentiation engine over `f64`
//! `ndarray` tensors, with the operations needed by convolutional
//! image-to-image models: strided convolution, normalization, nearest
//! upsampling, batched matrix products and softmax.
//!
//! Everything runs single-threaded and in a fixed order, so identical
//! inputs give bit-identical results.

mod conv;
pub mod gradcheck;
mod linalg;
pub mod nn;
mod norm;
mod ops;
mod optim;
mod params;
mod var;

pub use norm::{GroupStats, StatAxes};
pub use ops::sigmoid;
pub use optim::{Adam, AdamState};
pub use params::{count_trainable, Binding, Entry, Init, Leaves, ParamSpec, ParamStore};
pub use var::{Array, Gradients, Var};

pub use ndarray;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TensorError {
    #[error("no tensor named `{0}`")]
    MissingName(String),
    #[error("tensor `{0}` declared twice")]
    DuplicateName(String),
    #[error("tensor `{name}` has shape {found:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("invalid initializer for `{name}`")]
    InvalidInit { name: String },
}
