//! Dense tensors with tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records operations as they execute. Parameters live in a
//! [`ParamStore`] and enter the tape through [`Graph::param`]; after
//! [`Graph::backward`] the returned [`Gradients`] are folded into the store.

mod gradcheck;
mod graph;
mod params;
mod tensor;

use thiserror::Error;

pub use gradcheck::{finite_diff_check, relative_error, relative_error_beyond_noise, GradCheck};
pub use graph::{softmax_in_place, Graph, Var};
pub use params::{
    Checkpoint, CheckpointEntry, Gradients, ParamId, ParamStore, CHECKPOINT_FORMAT,
    CHECKPOINT_VERSION,
};
pub use tensor::Tensor;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("{op}: incompatible shapes {shapes:?}")]
    Shape {
        op: &'static str,
        shapes: Vec<Vec<usize>>,
    },
    #[error("{op}: index out of range for shape {shape:?}")]
    Index { op: &'static str, shape: Vec<usize> },
    #[error("shape {shape:?} does not hold {len} elements")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{0}: no inputs")]
    Empty(&'static str),
    #[error("loss must hold exactly one element, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("parameter {0} already registered")]
    DuplicateParam(String),
    #[error("{0}")]
    InvalidArgument(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
