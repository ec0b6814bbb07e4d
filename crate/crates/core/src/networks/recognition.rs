//! Recognition network `q_phi(u | z)`: a per-step diagonal Gaussian over the
//! latent function values, sampled with the reparameterization trick.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::linear::Linear;
use super::lstm::LstmCell;
use crate::autodiff::{Matrix, NodeId, ParamStore, Tape};
use crate::error::Result;

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 5.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecognitionKind {
    /// Per-step MLP on `z_t` alone.
    Mlp,
    /// Bidirectional LSTM over the whole observed series.
    BiLstm,
    /// Point mass at the observations: `u = z` exactly.
    PointMass,
}

#[derive(Clone, Debug)]
enum Body {
    Mlp { hidden: Linear, out: Linear },
    BiLstm { fwd: LstmCell, bwd: LstmCell, out: Linear },
    PointMass,
}

#[derive(Clone, Debug)]
pub struct RecognitionNetwork {
    body: Body,
}

/// Taped output of the recognition network for one series.
#[derive(Clone, Copy, Debug)]
pub struct Recognition {
    /// Posterior means, `T x 1`.
    pub mean: NodeId,
    /// Clamped log standard deviations, `T x 1`; `None` for a point mass.
    pub log_std: Option<NodeId>,
}

impl RecognitionNetwork {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, kind: RecognitionKind, hidden: usize, rng: &mut R) -> Self {
        let body = match kind {
            RecognitionKind::Mlp => Body::Mlp {
                hidden: Linear::new(store, "recognition.hidden", 1, hidden, rng),
                out: Linear::new(store, "recognition.out", hidden, 2, rng),
            },
            RecognitionKind::BiLstm => Body::BiLstm {
                fwd: LstmCell::new(store, "recognition.fwd", 1, hidden, rng),
                bwd: LstmCell::new(store, "recognition.bwd", 1, hidden, rng),
                out: Linear::new(store, "recognition.out", 2 * hidden, 2, rng),
            },
            RecognitionKind::PointMass => Body::PointMass,
        };
        Self { body }
    }

    pub fn kind(&self) -> RecognitionKind {
        match self.body {
            Body::Mlp { .. } => RecognitionKind::Mlp,
            Body::BiLstm { .. } => RecognitionKind::BiLstm,
            Body::PointMass => RecognitionKind::PointMass,
        }
    }

    /// Posterior parameters for the observations `z` (length `T >= 1`).
    pub fn recognize(&self, tape: &mut Tape, store: &ParamStore, z: &[f64]) -> Result<Recognition> {
        let t_len = z.len();
        let row = Matrix::from_row_slice(1, t_len, z);
        let out = match &self.body {
            Body::PointMass => {
                let mean = tape.column(z);
                return Ok(Recognition { mean, log_std: None });
            }
            Body::Mlp { hidden, out } => {
                let x = tape.leaf(row);
                let h = hidden.forward(tape, store, x)?;
                let h = tape.tanh(h);
                out.forward(tape, store, h)?
            }
            Body::BiLstm { fwd, bwd, out } => {
                let x = tape.leaf(row);
                let f = fwd.bind(tape, store)?;
                let hf = f.unroll(tape, x, false)?;
                let b = bwd.bind(tape, store)?;
                let hb = b.unroll(tape, x, true)?;
                let hf = tape.concat_cols(&hf)?;
                let hb = tape.concat_cols(&hb)?;
                let h = tape.concat_rows(&[hf, hb])?;
                out.forward(tape, store, h)?
            }
        };
        let out = tape.transpose(out);
        let mean = tape.col(out, 0)?;
        let raw = tape.col(out, 1)?;
        let log_std = tape.clamp(raw, LOG_STD_MIN, LOG_STD_MAX);
        Ok(Recognition {
            mean,
            log_std: Some(log_std),
        })
    }
}

impl Recognition {
    /// Reparameterized sample `u = mean + exp(log_std) * eps` and its
    /// log-density `log q(u | z)`, both on the tape.
    pub fn sample(&self, tape: &mut Tape, eps: &[f64]) -> Result<(NodeId, NodeId)> {
        match self.log_std {
            None => {
                let zero = tape.constant_scalar(0.0);
                Ok((self.mean, zero))
            }
            Some(s) => {
                let e = tape.column(eps);
                let std = tape.exp(s);
                let noise = tape.mul(std, e)?;
                let u = tape.add(self.mean, noise)?;
                // log q = sum_t [-0.5 ln 2pi - s_t - 0.5 eps_t^2]
                let half_sq: f64 = eps.iter().map(|e| 0.5 * e * e).sum();
                let s_sum = tape.sum(s);
                let neg = tape.neg(s_sum);
                let log_q = tape.offset(neg, -(eps.len() as f64) * HALF_LN_2PI - half_sq);
                Ok((u, log_q))
            }
        }
    }
}
