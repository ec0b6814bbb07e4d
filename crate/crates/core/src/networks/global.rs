use rand::Rng;

use super::linear::Linear;
use super::lstm::LstmStack;
use crate::autodiff::{Matrix, NodeId, ParamId, ParamStore, Tape};
use crate::error::{Error, Result};

/// Lower bound added to every noise scale produced by [`NoiseNetwork`].
pub const NOISE_FLOOR: f64 = 1e-6;

/// The shared deterministic factor generator `g(x_t) in R^K`: an LSTM stack
/// over the common time features followed by a linear readout.
#[derive(Clone, Debug)]
pub struct GlobalFactorNetwork {
    pub lstm: LstmStack,
    pub readout: Linear,
}

impl GlobalFactorNetwork {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        input_dim: usize,
        hidden_dim: usize,
        num_layers: usize,
        num_factors: usize,
        rng: &mut R,
    ) -> Self {
        let lstm = LstmStack::new(store, "global.lstm", input_dim, hidden_dim, num_layers, rng);
        let readout = Linear::new(store, "global.readout", hidden_dim, num_factors, rng);
        Self { lstm, readout }
    }

    pub fn num_factors(&self) -> usize {
        self.readout.output_dim
    }

    pub fn num_params(input_dim: usize, hidden_dim: usize, num_layers: usize, num_factors: usize) -> usize {
        LstmStack::num_params(input_dim, hidden_dim, num_layers) + Linear::num_params(hidden_dim, num_factors)
    }

    /// Factor matrix `G` (`T x K`) for the feature columns `xs` (`d x T`),
    /// unrolled from a zero initial state.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, xs: NodeId) -> Result<NodeId> {
        if tape.shape(xs).1 == 0 {
            return Err(Error::invalid("global factors need at least one time step"));
        }
        let hs = self.lstm.forward(tape, store, xs)?;
        let g = self.readout.forward(tape, store, hs)?;
        Ok(tape.transpose(g))
    }

    /// Untaped evaluation of `G`.
    pub fn factors(&self, store: &ParamStore, xs: &Matrix) -> Result<Matrix> {
        let mut tape = Tape::new();
        let x = tape.leaf(xs.clone());
        let g = self.forward(&mut tape, store, x)?;
        Ok(tape.value(g).clone())
    }
}

/// `f_i = G w_i`: the per-series fixed effect as a `T x 1` node.
pub fn fixed_effect(tape: &mut Tape, w: NodeId, g: NodeId) -> Result<NodeId> {
    tape.matmul(g, w)
}

/// Per-series loading vectors `w_i in R^K`, one parameter per series.
#[derive(Clone, Debug, Default)]
pub struct Embeddings {
    pub ids: Vec<ParamId>,
}

impl Embeddings {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, series: &[String], dim: usize, rng: &mut R) -> Self {
        let ids = series
            .iter()
            .map(|name| store.add_uniform(format!("embedding.{name}"), dim, 1, dim, rng))
            .collect();
        Self { ids }
    }

    pub fn get(&self, series: usize) -> ParamId {
        self.ids[series]
    }
}

/// DF-RNN local noise scale `sigma_{i,t} = softplus(rnn([x_t; w_i])) + floor`.
#[derive(Clone, Debug)]
pub struct NoiseNetwork {
    pub lstm: LstmStack,
    pub readout: Linear,
}

impl NoiseNetwork {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        input_dim: usize,
        hidden_dim: usize,
        num_layers: usize,
        rng: &mut R,
    ) -> Self {
        let lstm = LstmStack::new(store, "noise.lstm", input_dim, hidden_dim, num_layers, rng);
        let readout = Linear::new(store, "noise.readout", hidden_dim, 1, rng);
        Self { lstm, readout }
    }

    /// Noise scales as a `T x 1` node. `xs` is `d x T`; `embedding`, when
    /// present, is appended to every column.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        xs: NodeId,
        embedding: Option<NodeId>,
    ) -> Result<NodeId> {
        let input = match embedding {
            Some(w) => {
                let t_len = tape.shape(xs).1;
                let ones = tape.leaf(Matrix::from_element(1, t_len, 1.0));
                let wide = tape.matmul(w, ones)?;
                tape.concat_rows(&[xs, wide])?
            }
            None => xs,
        };
        let hs = self.lstm.forward(tape, store, input)?;
        let raw = self.readout.forward(tape, store, hs)?;
        let sp = tape.softplus(raw);
        let sigma = tape.offset(sp, NOISE_FLOOR);
        Ok(tape.transpose(sigma))
    }
}
