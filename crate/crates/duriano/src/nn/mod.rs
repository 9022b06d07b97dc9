//! Minimal numerical layer library with reverse-mode gradients.
//!
//! All tensors are two-dimensional `[rows, cols]` double-precision
//! matrices; vectors are single-row matrices. A [`Tape`] records operations
//! in execution order and [`Tape::backward`] accumulates gradients in
//! reverse topological order. Layer structs ([`layers`]) own named
//! parameters in a [`layers::ParamSet`] and replay them onto a fresh tape
//! per forward pass.

mod gradcheck;
mod layers;
mod tape;

pub use gradcheck::{max_rel_error, numeric_gradient};
pub use layers::{
    Activation, BatchNorm, BiGru, Cbhg, CbhgConfig, Conv1d, Conv1dBank, Embedding, Forward, Gru,
    Highway, Linear, ParamId, ParamSet,
};
pub use tape::{Tape, Var};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("{op}: shape mismatch: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("embedding id {id} out of range (vocabulary {vocab})")]
    IdOutOfRange { id: usize, vocab: usize },
    #[error("duplicate parameter name '{0}'")]
    DuplicateParam(String),
    #[error("bad layer config: {0}")]
    BadConfig(String),
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("unknown parameter '{0}'")]
    UnknownParam(String),
}
