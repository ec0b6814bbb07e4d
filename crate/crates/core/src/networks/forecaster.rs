use rand::Rng;

use super::global::GlobalFactorNetwork;
use super::linear::Linear;
use super::lstm::LstmStack;
use crate::autodiff::{Matrix, NodeId, ParamStore, Tape};
use crate::error::Result;

/// Baseline structure predicting `z_hat_{i,t} = rnn([w_i; x_t])` with a scalar
/// readout, in contrast to the factor structure `w_i^T rnn(x_t)`.
#[derive(Clone, Debug)]
pub struct RnnForecaster {
    pub lstm: LstmStack,
    pub readout: Linear,
}

impl RnnForecaster {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        feature_dim: usize,
        embedding_dim: usize,
        hidden_dim: usize,
        num_layers: usize,
        rng: &mut R,
    ) -> Self {
        let lstm = LstmStack::new(
            store,
            "forecaster.lstm",
            feature_dim + embedding_dim,
            hidden_dim,
            num_layers,
            rng,
        );
        let readout = Linear::new(store, "forecaster.readout", hidden_dim, 1, rng);
        Self { lstm, readout }
    }

    pub fn num_params(feature_dim: usize, embedding_dim: usize, hidden_dim: usize, num_layers: usize) -> usize {
        LstmStack::num_params(feature_dim + embedding_dim, hidden_dim, num_layers) + Linear::num_params(hidden_dim, 1)
    }

    /// Point forecasts (`T x 1`) from the embedding node `w` and features `xs`
    /// (`d x T`). The observations never enter.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, w: NodeId, xs: NodeId) -> Result<NodeId> {
        let t_len = tape.shape(xs).1;
        let ones = tape.leaf(Matrix::from_element(1, t_len, 1.0));
        let wide = tape.matmul(w, ones)?;
        let input = tape.concat_rows(&[wide, xs])?;
        let hs = self.lstm.forward(tape, store, input)?;
        let y = self.readout.forward(tape, store, hs)?;
        Ok(tape.transpose(y))
    }
}

/// Hidden size for an [`RnnForecaster`] whose parameter count is closest to a
/// [`GlobalFactorNetwork`] of the given configuration (embeddings excluded,
/// since both structures carry the same `N x K` table).
pub fn matched_forecaster_hidden(feature_dim: usize, hidden_dim: usize, num_layers: usize, num_factors: usize) -> usize {
    let target = GlobalFactorNetwork::num_params(feature_dim, hidden_dim, num_layers, num_factors) as i64;
    (1..=4 * hidden_dim.max(1))
        .min_by_key(|&h| (RnnForecaster::num_params(feature_dim, num_factors, h, num_layers) as i64 - target).abs())
        .unwrap_or(hidden_dim)
}
