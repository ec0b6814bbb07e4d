//! Neural building blocks: LSTM stacks, the global factor network, the noise
//! network for DF-RNN, the recognition network for variational inference and
//! the plain RNN forecaster used as a structural baseline.

mod forecaster;
mod global;
mod linear;
mod lstm;
mod recognition;

pub use forecaster::{matched_forecaster_hidden, RnnForecaster};
pub use global::{fixed_effect, Embeddings, GlobalFactorNetwork, NoiseNetwork, NOISE_FLOOR};
pub use linear::Linear;
pub use lstm::{BoundLstm, LstmCell, LstmStack, GATES};
pub use recognition::{Recognition, RecognitionKind, RecognitionNetwork, LOG_STD_MAX, LOG_STD_MIN};
