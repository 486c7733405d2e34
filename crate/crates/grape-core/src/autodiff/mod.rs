//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! The engine is deliberately small: a [`Tape`] records the primitives the
//! model needs (matmul, bias add, concat, ReLU, row gather, column slice,
//! segment aggregation, masked combine, MSE, softmax cross-entropy) and
//! [`Tape::backward`] replays them once in reverse, accumulating gradients
//! into every tensor that requires them. All shapes are explicit; the only
//! broadcast is row-wise bias addition.

mod adam;
mod tape;

pub use adam::{clip_global_norm, AdamState};
pub use tape::{Aggregator, Tape, Tensor, TensorId};
