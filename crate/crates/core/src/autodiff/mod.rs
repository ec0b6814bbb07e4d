//! Reverse-mode automatic differentiation and the Adam optimizer.

mod adam;
mod params;
mod tape;

pub use adam::{Adam, AdamConfig, AdamState};
pub use params::{ParamId, ParamStore, Parameter};
pub use tape::{cholesky_with_jitter, sigmoid, softplus, softplus_inv, Gradients, Matrix, NodeId, Op, Tape, JITTER_LADDER};
