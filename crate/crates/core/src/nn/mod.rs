//! Minimal reverse-mode differentiation layer: parameter storage, a vector
//! tape, a message-passing GRU, Adam, finite-difference checks and a
//! checkpoint container.

pub mod checkpoint;
pub mod gradcheck;
pub mod gru;
pub mod optim;
pub mod params;
pub mod tape;

pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use gru::{gru_step, GateInputs, GruCellParams, GruInput, PreparedMessage};
pub use optim::Adam;
pub use params::{Gradients, ParamId, ParamSet, Tensor};
pub use tape::{Tape, Var};
pub use checkpoint::{read_container, write_container, Manifest};

use thiserror::Error;

/// Floating-point element type of tapes and parameters.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + std::iter::Sum
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::fmt::Debug
    + Default
    + Send
    + Sync
    + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
