use rand::Rng;

use crate::autodiff::{NodeId, ParamId, ParamStore, Tape};
use crate::error::Result;

/// Affine map `W x + b` applied column-wise.
#[derive(Clone, Debug)]
pub struct Linear {
    pub input_dim: usize,
    pub output_dim: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        output_dim: usize,
        rng: &mut R,
    ) -> Self {
        let weight = store.add_uniform(format!("{name}.w"), output_dim, input_dim, input_dim, rng);
        let bias = store.add_uniform(format!("{name}.b"), output_dim, 1, input_dim, rng);
        Self {
            input_dim,
            output_dim,
            weight,
            bias,
        }
    }

    pub fn num_params(input_dim: usize, output_dim: usize) -> usize {
        output_dim * (input_dim + 1)
    }

    /// `xs` is `input_dim x T`; the result is `output_dim x T`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, xs: NodeId) -> Result<NodeId> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let y = tape.matmul(w, xs)?;
        tape.add(y, b)
    }
}
