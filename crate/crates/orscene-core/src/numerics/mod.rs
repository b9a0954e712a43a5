//! Dense-tensor numerics: reverse-mode autodiff on a replayable tape, an Adam
//! optimizer, a deterministic counter-based RNG, and a central-difference
//! gradient oracle.
//!
//! Everything is 64-bit and single-threaded per tape; a forward pass records
//! primitive operations eagerly and `Tape::backward` replays adjoints in
//! exact reverse order.

mod fdiff;
mod params;
mod rng;
mod tape;
mod tensor;

pub use fdiff::{finite_diff_grad, rel_err};
pub use params::{AdamConfig, ParamId, ParamStore, Parameter};
pub use rng::RngStream;
pub use tape::{softmax_row, Tape, ValueId};
pub use tensor::Tensor;

use thiserror::Error;

/// Errors surfaced by tensor and tape operations.
#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("softmax input has no unmasked entry")]
    AllMasked,
    #[error("index {index} out of range (len {len}) in {op}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("value id {0} does not belong to this tape")]
    UnknownValue(usize),
    #[error("backward target must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
}

pub type Result<T> = std::result::Result<T, NumericsError>;
