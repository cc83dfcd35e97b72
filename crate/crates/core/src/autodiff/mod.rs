//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Tape`] records one forward computation; [`Tape::backward`] sweeps it in
//! reverse once and returns [`Gradients`]. Trainable values live in a
//! [`ParamStore`] and are bound onto a tape with [`Tape::param`].

mod checkpoint;
mod linalg;
mod optim;
mod params;
mod tape;
mod tensor;

pub use checkpoint::{Container, FORMAT_VERSION, MAGIC};
pub use linalg::ConvGeometry;
pub use optim::{Adam, Sgd};
pub use params::{ParamId, ParamStore, Parameter};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum AutodiffError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("loss does not depend on any value that requires a gradient")]
    Detached,
    #[error("tape already consumed by backward")]
    TapeConsumed,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
